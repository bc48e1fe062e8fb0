use num_traits::Float;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LearnerError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named tensors stored back to back in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F = f32> {
    data: Vec<F>,
    segments: Vec<Segment>,
}

impl<F: Copy> Default for ParamStore<F> {
    fn default() -> Self {
        Self {
            data: Vec::new(),
            segments: Vec::new(),
        }
    }
}

impl<F: Copy> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor. `values.len()` must equal the product of `shape`.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<F>) {
        let len: usize = shape.iter().product();
        assert_eq!(len, values.len(), "tensor shape does not match its values");
        self.segments.push(Segment {
            name: name.into(),
            offset: self.data.len(),
            shape,
        });
        self.data.extend(values);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        self.segment(name).map(|s| &self.data[s.offset..s.offset + s.len()])
    }

    /// Same layout with every entry converted.
    pub fn map<G: Copy>(&self, mut f: impl FnMut(F) -> G) -> ParamStore<G> {
        ParamStore {
            data: self.data.iter().map(|&x| f(x)).collect(),
            segments: self.segments.clone(),
        }
    }

    /// Same layout, new values.
    pub fn with_values<G: Copy>(&self, values: Vec<G>) -> ParamStore<G> {
        assert_eq!(values.len(), self.data.len());
        ParamStore {
            data: values,
            segments: self.segments.clone(),
        }
    }
}

impl ParamStore<f32> {
    pub fn to_f64(&self) -> ParamStore<f64> {
        self.map(f64::from)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Hex SHA-256 of the little-endian bit patterns.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for x in &self.data {
            h.update(x.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cheap 64-bit fingerprint of the bit patterns (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for x in &self.data {
            for b in x.to_le_bytes() {
                hash = (hash ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }
}

/// One row of a sparse update: `values` replace nothing, they are subtracted
/// (scaled by the learning rate) from `params[index * width .. (index + 1) * width]`
/// where `width = values.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub index: u32,
    pub values: Vec<f32>,
}

/// Gradient payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Delta {
    Dense(Vec<f32>),
    Sparse(Vec<SparseRow>),
}

impl Delta {
    /// Number of scalar entries carried.
    pub fn nnz(&self) -> usize {
        match self {
            Delta::Dense(v) => v.len(),
            Delta::Sparse(rows) => rows.iter().map(|r| r.values.len()).sum(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Delta::Dense(v) => v.iter().all(|x| x.is_finite()),
            Delta::Sparse(rows) => rows.iter().all(|r| r.values.iter().all(|x| x.is_finite())),
        }
    }

    /// Dense equivalent over a parameter vector of length `len`.
    pub fn densify(&self, len: usize) -> Result<Vec<f32>, LearnerError> {
        match self {
            Delta::Dense(v) => {
                if v.len() != len {
                    return Err(LearnerError::DimensionMismatch { expected: len, got: v.len() });
                }
                Ok(v.clone())
            }
            Delta::Sparse(rows) => {
                let mut out = vec![0.0; len];
                for r in rows {
                    let (start, end) = row_range(r, len)?;
                    for (o, v) in out[start..end].iter_mut().zip(&r.values) {
                        *o += *v;
                    }
                }
                Ok(out)
            }
        }
    }
}

pub(crate) fn row_range(row: &SparseRow, len: usize) -> Result<(usize, usize), LearnerError> {
    let width = row.values.len();
    let start = row.index as usize * width;
    let end = start + width;
    if end > len {
        return Err(LearnerError::DimensionMismatch { expected: len, got: end });
    }
    Ok((start, end))
}

/// Uniform draws in `[-limit, limit)` as `F`.
pub(crate) fn uniform<F: Float, R: rand::Rng>(rng: &mut R, n: usize, limit: f64) -> Vec<F> {
    (0..n)
        .map(|_| F::from(rng.random_range(-limit..limit)).expect("finite draw"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_lookup() {
        let mut p = ParamStore::new();
        p.push("a", vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]);
        p.push("b", vec![3], vec![5.0, 6.0, 7.0]);
        assert_eq!(p.len(), 7);
        assert_eq!(p.tensor("b").unwrap(), &[5.0, 6.0, 7.0]);
        assert_eq!(p.segment("b").unwrap().offset, 4);
        assert!(p.tensor("c").is_none());
    }

    #[test]
    fn sparse_densify_accumulates_rows() {
        let d = Delta::Sparse(vec![
            SparseRow { index: 1, values: vec![1.0, 2.0] },
            SparseRow { index: 1, values: vec![0.5, 0.5] },
        ]);
        assert_eq!(d.densify(6).unwrap(), vec![0.0, 0.0, 1.5, 2.5, 0.0, 0.0]);
        assert!(d.densify(3).is_err());
        assert_eq!(d.nnz(), 4);
    }
}
