use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_MASK_RATE: f64 = 0.3;

/// `inputs` has `<mask>` at every index listed in `positions`; `targets`
/// holds the original ids for the whole sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSequence {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub positions: Vec<usize>,
}

impl MaskedSequence {
    pub fn is_masked(&self, i: usize) -> bool {
        self.positions.binary_search(&i).is_ok()
    }
}

pub fn mask_tokens(ids: &[usize], rate: f64, rng: &mut Rng, vocab: &Vocab) -> Result<MaskedSequence> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::contract(format!("mask rate {rate} outside (0, 1)")));
    }
    let (unk, pad, mask) = (vocab.unk(), vocab.pad(), vocab.mask());
    let mut inputs = ids.to_vec();
    let mut positions = Vec::new();
    for (i, &id) in ids.iter().enumerate() {
        if id == unk || id == pad {
            continue;
        }
        if rng.bernoulli(rate) {
            inputs[i] = mask;
            positions.push(i);
        }
    }
    Ok(MaskedSequence {
        inputs,
        targets: ids.to_vec(),
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_bounds() {
        let v = Vocab::from_list(&["a"]).unwrap();
        let mut rng = Rng::new(0);
        for r in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(mask_tokens(&[0], r, &mut rng, &v).is_err());
        }
    }

    #[test]
    fn unk_never_masked() {
        let v = Vocab::from_list(&["a"]).unwrap();
        let ids = vec![v.unk(); 500];
        let m = mask_tokens(&ids, 0.9, &mut Rng::new(1), &v).unwrap();
        assert!(m.positions.is_empty());
        assert_eq!(m.inputs, ids);
    }

    #[test]
    fn seeded() {
        let v = Vocab::from_list(&["a", "b"]).unwrap();
        let ids: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let a = mask_tokens(&ids, 0.3, &mut Rng::new(5), &v).unwrap();
        let b = mask_tokens(&ids, 0.3, &mut Rng::new(5), &v).unwrap();
        assert_eq!(a, b);
        assert!(a.positions.iter().all(|&i| a.inputs[i] == v.mask()));
    }
}
