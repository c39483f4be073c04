use std::fmt;

/// Half-open index range `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    pub lo: usize,
    pub hi: usize,
}

impl Interval {
    pub fn new(lo: usize, hi: usize) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}) is reversed");
        Interval { lo, hi }
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn contains(&self, i: usize) -> bool {
        self.lo <= i && i < self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo < hi).then_some(Interval { lo, hi })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.lo, self.hi)
    }
}

/// Sorts, drops empties and merges touching or overlapping intervals.
pub fn normalize(mut v: Vec<Interval>) -> Vec<Interval> {
    v.retain(|iv| !iv.is_empty());
    v.sort_unstable();
    let mut out: Vec<Interval> = Vec::with_capacity(v.len());
    for iv in v {
        match out.last_mut() {
            Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
            _ => out.push(iv),
        }
    }
    out
}

/// Total number of indices covered by a normalized list.
pub fn count(v: &[Interval]) -> usize {
    v.iter().map(Interval::len).sum()
}

/// Intersection of two normalized lists.
pub fn intersect_lists(a: &[Interval], b: &[Interval]) -> Vec<Interval> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        if let Some(x) = a[i].intersect(&b[j]) {
            out.push(x);
        }
        if a[i].hi <= b[j].hi {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// `a` minus `b`, both normalized.
pub fn subtract_lists(a: &[Interval], b: &[Interval]) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut j = 0;
    for iv in a {
        let mut lo = iv.lo;
        while j < b.len() && b[j].hi <= lo {
            j += 1;
        }
        let mut k = j;
        while k < b.len() && b[k].lo < iv.hi {
            if b[k].lo > lo {
                out.push(Interval::new(lo, b[k].lo));
            }
            lo = lo.max(b[k].hi);
            k += 1;
        }
        if lo < iv.hi {
            out.push(Interval::new(lo, iv.hi));
        }
    }
    out
}

/// Expands a list into its individual indices.
pub fn indices(v: &[Interval]) -> impl Iterator<Item = usize> + '_ {
    v.iter().flat_map(|iv| iv.lo..iv.hi)
}

/// Formats a list as `[a,b)+[c,d)`, or `{}` when empty.
pub fn format_list(v: &[Interval]) -> String {
    if v.is_empty() {
        return "{}".to_string();
    }
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("+")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: usize, hi: usize) -> Interval {
        Interval::new(lo, hi)
    }

    #[test]
    fn normalize_merges_touching() {
        assert_eq!(normalize(vec![iv(4, 6), iv(0, 2), iv(2, 3), iv(5, 5)]), vec![iv(0, 3), iv(4, 6)]);
    }

    #[test]
    fn list_algebra() {
        let a = vec![iv(0, 4), iv(6, 10)];
        let b = vec![iv(2, 7), iv(9, 12)];
        assert_eq!(intersect_lists(&a, &b), vec![iv(2, 4), iv(6, 7), iv(9, 10)]);
        assert_eq!(subtract_lists(&a, &b), vec![iv(0, 2), iv(7, 9)]);
        assert_eq!(subtract_lists(&b, &a), vec![iv(4, 6), iv(10, 12)]);
        assert_eq!(count(&a), 8);
        assert_eq!(format_list(&a), "[0,4)+[6,10)");
    }
}
