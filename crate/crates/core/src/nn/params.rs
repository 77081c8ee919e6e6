use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter array with a named segment map.
///
/// The segments partition the array exactly: they are contiguous, ordered,
/// non-overlapping and cover every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        let mut cursor = 0;
        for s in &segments {
            if s.offset != cursor {
                return Err(Error::InvalidParameter(format!(
                    "segment {} starts at {} but previous ended at {cursor}",
                    s.name, s.offset
                )));
            }
            cursor += s.len;
        }
        if cursor != values.len() {
            return Err(Error::ShapeMismatch {
                expected: cursor,
                got: values.len(),
            });
        }
        Ok(Self { values, segments })
    }

    /// One unnamed segment covering everything.
    pub fn flat(values: Vec<f64>) -> Self {
        let len = values.len();
        Self {
            values,
            segments: vec![Segment {
                name: "params".into(),
                offset: 0,
                len,
            }],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            segments: self.segments.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    /// Replaces the values, keeping the segment map.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.segments.clone())
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(name: &str, offset: usize, len: usize) -> Segment {
        Segment {
            name: name.into(),
            offset,
            len,
        }
    }

    #[test]
    fn partition_is_enforced() {
        let ok = ParamVector::new(vec![0.0; 5], vec![seg("w", 0, 3), seg("b", 3, 2)]).unwrap();
        assert_eq!(ok.segment("b").unwrap().len(), 2);
        assert!(ParamVector::new(vec![0.0; 5], vec![seg("w", 0, 3), seg("b", 4, 1)]).is_err());
        assert!(ParamVector::new(vec![0.0; 6], vec![seg("w", 0, 3), seg("b", 3, 2)]).is_err());
    }
}
