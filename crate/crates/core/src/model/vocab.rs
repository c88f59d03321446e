use serde::{Deserialize, Serialize};

use crate::model::modality::Modality;

/// Token id layout: text ids `[0, n)`, image ids `[n, 2n)`, end-of-output
/// marker `2n`. Output heads score all `2n + 1` classes, so a model can emit
/// a token of the wrong modality or stop early.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub per_modality: u32,
}

impl Vocab {
    pub fn new(per_modality: u32) -> Self {
        Self { per_modality }
    }

    pub fn offset(self, m: Modality) -> u32 {
        match m {
            Modality::Text => 0,
            Modality::Image => self.per_modality,
        }
    }

    pub fn contains(self, m: Modality, id: u32) -> bool {
        let lo = self.offset(m);
        (lo..lo + self.per_modality).contains(&id)
    }

    pub fn modality_of(self, id: u32) -> Option<Modality> {
        Modality::ALL.into_iter().find(|&m| self.contains(m, id))
    }

    /// Global id of local index `i` within modality `m`.
    pub fn token(self, m: Modality, i: u32) -> u32 {
        debug_assert!(i < self.per_modality);
        self.offset(m) + i
    }

    pub fn local(self, m: Modality, id: u32) -> Option<usize> {
        self.contains(m, id).then(|| (id - self.offset(m)) as usize)
    }

    pub fn eos(self) -> u32 {
        2 * self.per_modality
    }

    pub fn output_classes(self) -> usize {
        2 * self.per_modality as usize + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_disjoint() {
        let v = Vocab::new(64);
        assert_eq!(v.modality_of(0), Some(Modality::Text));
        assert_eq!(v.modality_of(63), Some(Modality::Text));
        assert_eq!(v.modality_of(64), Some(Modality::Image));
        assert_eq!(v.modality_of(127), Some(Modality::Image));
        assert_eq!(v.modality_of(128), None);
        assert_eq!(v.eos(), 128);
        assert_eq!(v.output_classes(), 129);
        assert_eq!(v.local(Modality::Image, 70), Some(6));
        assert_eq!(v.local(Modality::Text, 70), None);
    }
}
