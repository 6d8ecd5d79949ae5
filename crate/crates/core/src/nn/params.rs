use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Feature,
    Classifier,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Feature => 0,
            Role::Classifier => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Role::Feature),
            1 => Some(Role::Classifier),
            _ => None,
        }
    }
}

/// One entry of a parameter layout: a named contiguous slice of the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub name: String,
    pub role: Role,
    pub offset: usize,
    pub len: usize,
}

impl LayerSlot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat model parameters plus the layer layout that gives them meaning.
///
/// Every layer stores its weights (row-major, `out x in` for dense layers) followed by
/// its biases. Layouts are contiguous, non-overlapping, and contain at least one
/// classifier layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerSlot>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<LayerSlot>) -> Result<Self> {
        let mut expected = 0;
        for slot in &layout {
            if slot.offset != expected {
                return Err(Error::Shape {
                    layer: slot.name.clone(),
                    expected,
                    found: slot.offset,
                });
            }
            expected += slot.len;
        }
        if expected != values.len() {
            return Err(Error::Shape {
                layer: "<total>".into(),
                expected,
                found: values.len(),
            });
        }
        if !layout.iter().any(|s| s.role == Role::Classifier) {
            return Err(Error::invalid("layout has no classifier layer"));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Vec<LayerSlot>) -> Result<Self> {
        let n = layout.iter().map(|s| s.len).sum();
        Self::new(vec![0.0; n], layout)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    /// Same layout, different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Shape {
                layer: "<total>".into(),
                expected: self.values.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[LayerSlot] {
        &self.layout
    }

    pub fn layer(&self, index: usize) -> &[f64] {
        &self.values[self.layout[index].range()]
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut [f64] {
        let range = self.layout[index].range();
        &mut self.values[range]
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            return Ok(());
        }
        let bad = self
            .layout
            .iter()
            .zip(other.layout.iter())
            .find(|(a, b)| a != b)
            .map(|(a, b)| (a.name.clone(), a.len, b.len))
            .unwrap_or_else(|| {
                (
                    "<layer count>".into(),
                    self.layout.len(),
                    other.layout.len(),
                )
            });
        Err(Error::Shape {
            layer: bad.0,
            expected: bad.1,
            found: bad.2,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn classifier_slots(&self) -> impl Iterator<Item = &LayerSlot> {
        self.layout.iter().filter(|s| s.role == Role::Classifier)
    }

    /// Checkpoint encoding: layer count, then per layer name length, name bytes, role,
    /// offset and length (all integers u64 little-endian, role a single byte), then the
    /// values as little-endian f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.layout.len() as u64).to_le_bytes())?;
        for slot in &self.layout {
            let name = slot.name.as_bytes();
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[slot.role.code()])?;
            w.write_all(&(slot.offset as u64).to_le_bytes())?;
            w.write_all(&(slot.len as u64).to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let malformed = |msg: &str| Error::Data(format!("malformed checkpoint: {msg}"));
        let mut u64_buf = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut u64_buf)
                .map_err(|_| malformed("unexpected end of header"))?;
            Ok(u64::from_le_bytes(u64_buf))
        };
        let count = read_u64(&mut r)? as usize;
        let mut layout = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = read_u64(&mut r)? as usize;
            if name_len > 1 << 16 {
                return Err(malformed("layer name too long"));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)
                .map_err(|_| malformed("unexpected end of layer name"))?;
            let name = String::from_utf8(name).map_err(|_| malformed("layer name is not UTF-8"))?;
            let mut role = [0u8; 1];
            r.read_exact(&mut role)
                .map_err(|_| malformed("unexpected end of role"))?;
            let role = Role::from_code(role[0]).ok_or_else(|| malformed("unknown role code"))?;
            let offset = read_u64(&mut r)? as usize;
            let len = read_u64(&mut r)? as usize;
            layout.push(LayerSlot {
                name,
                role,
                offset,
                len,
            });
        }
        let total: usize = layout.iter().map(|s| s.len).sum();
        let mut values = Vec::with_capacity(total);
        let mut buf = [0u8; 8];
        for _ in 0..total {
            r.read_exact(&mut buf)
                .map_err(|_| malformed("unexpected end of values"))?;
            values.push(f64::from_le_bytes(buf));
        }
        ParamVector::new(values, layout)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout(lens: &[(usize, Role)]) -> Vec<LayerSlot> {
        let mut offset = 0;
        lens.iter()
            .enumerate()
            .map(|(i, &(len, role))| {
                let slot = LayerSlot {
                    name: format!("l{i}"),
                    role,
                    offset,
                    len,
                };
                offset += len;
                slot
            })
            .collect()
    }

    #[test]
    fn rejects_gaps_and_missing_classifier() {
        let mut l = layout(&[(2, Role::Feature), (3, Role::Classifier)]);
        l[1].offset = 3;
        assert!(ParamVector::zeros(l).is_err());
        assert!(ParamVector::zeros(layout(&[(2, Role::Feature)])).is_err());
        assert!(ParamVector::new(vec![0.0; 4], layout(&[(5, Role::Classifier)])).is_err());
    }

    #[test]
    fn truncated_checkpoint_is_an_error() {
        let p = ParamVector::new(vec![1.0, 2.0, 3.0], layout(&[(3, Role::Classifier)])).unwrap();
        let bytes = p.to_bytes();
        assert!(ParamVector::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..40), split in 0usize..40) {
            let split = split.min(values.len() - 1);
            let l = if split == 0 {
                layout(&[(values.len(), Role::Classifier)])
            } else {
                layout(&[(split, Role::Feature), (values.len() - split, Role::Classifier)])
            };
            let p = ParamVector::new(values, l).unwrap();
            let q = ParamVector::from_bytes(&p.to_bytes()).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
