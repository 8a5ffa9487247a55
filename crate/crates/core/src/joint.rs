//! Mixed-radix indexing of tuples (joint actions, joint observations,
//! joint controller nodes). The first coordinate is the most significant.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointSpace {
    radices: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl JointSpace {
    pub fn new(radices: Vec<usize>) -> Self {
        let mut strides = vec![1; radices.len()];
        let mut size = 1usize;
        for k in (0..radices.len()).rev() {
            strides[k] = size;
            size *= radices[k];
        }
        Self {
            radices,
            strides,
            size,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dims(&self) -> usize {
        self.radices.len()
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn radix(&self, k: usize) -> usize {
        self.radices[k]
    }

    pub fn stride(&self, k: usize) -> usize {
        self.strides[k]
    }

    pub fn encode(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.radices.len());
        coords
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| c * s)
            .sum()
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        self.decode_into(index, &mut out);
        out
    }

    pub fn decode_into(&self, mut index: usize, out: &mut [usize]) {
        for k in 0..self.radices.len() {
            out[k] = index / self.strides[k];
            index %= self.strides[k];
        }
    }

    #[inline]
    pub fn component(&self, index: usize, k: usize) -> usize {
        (index / self.strides[k]) % self.radices[k]
    }

    /// Index with coordinate `k` replaced by `value`.
    #[inline]
    pub fn with_component(&self, index: usize, k: usize, value: usize) -> usize {
        index - self.component(index, k) * self.strides[k] + value * self.strides[k]
    }

    /// The space with coordinate `k` removed.
    pub fn without(&self, k: usize) -> JointSpace {
        let mut r = self.radices.clone();
        r.remove(k);
        JointSpace::new(r)
    }

    /// Lifts an index of `self.without(k)` into this space with coordinate
    /// `k` set to `value`.
    pub fn insert(&self, reduced: &JointSpace, reduced_index: usize, k: usize, value: usize) -> usize {
        let mut idx = 0;
        let mut rk = 0;
        for d in 0..self.radices.len() {
            let c = if d == k {
                value
            } else {
                let c = reduced.component(reduced_index, rk);
                rk += 1;
                c
            };
            idx += c * self.strides[d];
        }
        idx
    }

    /// Iterates over all coordinate tuples in index order.
    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.size).map(move |i| self.decode(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lexicographic_order() {
        let js = JointSpace::new(vec![2, 3]);
        let all: Vec<_> = js.iter().collect();
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[1], vec![0, 1]);
        assert_eq!(all[3], vec![1, 0]);
        assert_eq!(js.size(), 6);
    }

    #[test]
    fn empty_space_has_one_element() {
        let js = JointSpace::new(vec![]);
        assert_eq!(js.size(), 1);
        assert_eq!(js.encode(&[]), 0);
    }

    proptest! {
        #[test]
        fn encode_decode_and_insert(r in proptest::collection::vec(1usize..5, 1..5), seed in 0usize..10_000) {
            let js = JointSpace::new(r.clone());
            let idx = seed % js.size();
            let c = js.decode(idx);
            prop_assert_eq!(js.encode(&c), idx);
            for k in 0..r.len() {
                prop_assert_eq!(js.component(idx, k), c[k]);
                let red = js.without(k);
                let mut rc = c.clone();
                rc.remove(k);
                let ri = red.encode(&rc);
                prop_assert_eq!(js.insert(&red, ri, k, c[k]), idx);
                let v = (c[k] + 1) % r[k];
                let mut c2 = c.clone();
                c2[k] = v;
                prop_assert_eq!(js.with_component(idx, k, v), js.encode(&c2));
            }
        }
    }
}
