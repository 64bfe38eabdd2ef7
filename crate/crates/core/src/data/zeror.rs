use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Majority-class baseline. Ties go to the class that sorts first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroR<T> {
    pub class: T,
}

impl<T: Ord + Clone> ZeroR<T> {
    pub fn fit(labels: &[T]) -> Result<Self> {
        let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
        for l in labels {
            *counts.entry(l).or_default() += 1;
        }
        let mut best: Option<(&T, usize)> = None;
        for (class, n) in counts {
            if best.is_none_or(|(_, m)| n > m) {
                best = Some((class, n));
            }
        }
        let (class, _) = best.ok_or_else(|| Error::Data("ZeroR needs at least one label".into()))?;
        Ok(Self { class: class.clone() })
    }

    pub fn predict(&self, n: usize) -> Vec<T> {
        vec![self.class.clone(); n]
    }

    pub fn accuracy(&self, golds: &[T]) -> Result<f64> {
        if golds.is_empty() {
            return Err(Error::UndefinedMetric("accuracy over zero examples".into()));
        }
        Ok(golds.iter().filter(|g| **g == self.class).count() as f64 / golds.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_and_ties() {
        let z = ZeroR::fit(&["a", "b", "a"]).unwrap();
        assert_eq!(z.class, "a");
        assert_eq!(z.accuracy(&["a", "b", "b", "b"]).unwrap(), 0.25);
        assert_eq!(ZeroR::fit(&["dat", "die", "die", "dat"]).unwrap().class, "dat");
        assert!(ZeroR::<u8>::fit(&[]).is_err());
    }
}
