//! Named tensor archives (safetensors) for pretrained weights and checkpoints.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::nn::{Module, Param, Tensor, Visitor, VisitorMut};

/// Parameters and buffers keyed by canonical layer path, plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorStore {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

fn to_f32(view: &TensorView<'_>, name: &str, path: &Path) -> Result<Vec<f32>> {
    let bytes = view.data();
    match view.dtype() {
        Dtype::F32 => Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect()),
        Dtype::BF16 => Ok(bytes
            .chunks_exact(2)
            .map(|b| f32::from_bits((u16::from_le_bytes([b[0], b[1]]) as u32) << 16))
            .collect()),
        Dtype::F64 => Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")) as f32)
            .collect()),
        other => Err(Error::Checkpoint(format!(
            "{}: tensor {name} has unsupported dtype {other:?} (expected F32, BF16 or F64)",
            path.display()
        ))),
    }
}

impl TensorStore {
    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
        let (_, meta) = SafeTensors::read_metadata(&buf).map_err(bad)?;
        let st = SafeTensors::deserialize(&buf).map_err(bad)?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            let data = to_f32(&view, &name, path)?;
            let shape = if view.shape().is_empty() { vec![1] } else { view.shape().to_vec() };
            tensors.insert(name, Tensor::new(&shape, data)?);
        }
        let metadata = meta.metadata().clone().unwrap_or_default().into_iter().collect();
        Ok(Self { tensors, metadata })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes: BTreeMap<&str, Vec<u8>> = self
            .tensors
            .iter()
            .map(|(k, t)| (k.as_str(), t.data().iter().flat_map(|v| v.to_le_bytes()).collect()))
            .collect();
        let views = self
            .tensors
            .iter()
            .map(|(k, t)| {
                TensorView::new(Dtype::F32, t.shape().to_vec(), &bytes[k.as_str()])
                    .map(|v| (k.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        let meta = (!meta.is_empty()).then_some(meta);
        safetensors::serialize_to_file(views, &meta, path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Snapshot every parameter and buffer of `model`.
    pub fn from_module(model: &dyn Module) -> Self {
        struct Collect(BTreeMap<String, Tensor>);
        impl Visitor for Collect {
            fn param(&mut self, path: &str, p: &Param) {
                self.0.insert(path.to_string(), p.value.clone());
            }
            fn buffer(&mut self, path: &str, b: &[f32]) {
                self.0.insert(path.to_string(), Tensor::new(&[b.len()], b.to_vec()).expect("1-d"));
            }
        }
        let mut c = Collect(BTreeMap::new());
        model.visit("", &mut c);
        Self {
            tensors: c.0,
            metadata: BTreeMap::new(),
        }
    }

    /// Copy matching entries into `model`. Paths for which `skip` holds are
    /// left untouched; any other path absent from the store is an error, as
    /// is a shape mismatch. Returns the number of tensors loaded.
    pub fn load_into(&self, model: &mut dyn Module, source: &str, skip: &dyn Fn(&str) -> bool) -> Result<usize> {
        struct Load<'a> {
            store: &'a TensorStore,
            skip: &'a dyn Fn(&str) -> bool,
            loaded: usize,
            missing: Vec<String>,
            mismatched: Vec<String>,
        }
        impl Load<'_> {
            fn fetch(&mut self, path: &str, shape: &[usize]) -> Option<&Tensor> {
                if (self.skip)(path) {
                    return None;
                }
                match self.store.tensors.get(path) {
                    None => {
                        self.missing.push(path.to_string());
                        None
                    }
                    Some(t) if t.numel() != shape.iter().product::<usize>() => {
                        self.mismatched.push(format!("{path}: expected {shape:?}, found {:?}", t.shape()));
                        None
                    }
                    Some(t) => {
                        self.loaded += 1;
                        Some(t)
                    }
                }
            }
        }
        impl VisitorMut for Load<'_> {
            fn param(&mut self, path: &str, p: &mut Param) {
                let shape = p.shape().to_vec();
                if let Some(t) = self.fetch(path, &shape) {
                    p.value.data_mut().copy_from_slice(t.data());
                }
            }
            fn buffer(&mut self, path: &str, b: &mut Vec<f32>) {
                if let Some(t) = self.fetch(path, &[b.len()]) {
                    b.copy_from_slice(t.data());
                }
            }
        }
        let mut l = Load {
            store: self,
            skip,
            loaded: 0,
            missing: Vec::new(),
            mismatched: Vec::new(),
        };
        model.visit_mut("", &mut l);
        if !l.mismatched.is_empty() {
            return Err(Error::Checkpoint(format!("{source}: shape mismatch: {}", l.mismatched.join("; "))));
        }
        if !l.missing.is_empty() {
            let shown: Vec<&str> = l.missing.iter().take(8).map(String::as_str).collect();
            return Err(Error::Checkpoint(format!(
                "{source}: {} tensors missing (first: {})",
                l.missing.len(),
                shown.join(", ")
            )));
        }
        Ok(l.loaded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Norm, NormKind, Sequential};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> Sequential {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sequential::new()
            .with("fc", Linear::new(3, 4, &mut rng))
            .with("bn", Norm::new(NormKind::Batch, 4).unwrap())
    }

    #[test]
    fn write_read_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let mut src = net(1);
        struct Bump;
        impl VisitorMut for Bump {
            fn buffer(&mut self, _: &str, b: &mut Vec<f32>) {
                b.iter_mut().for_each(|v| *v += 0.25);
            }
        }
        src.visit_mut("", &mut Bump);
        let mut store = TensorStore::from_module(&src);
        store.metadata.insert("k".into(), "v".into());
        store.write(&path).unwrap();
        let back = TensorStore::read(&path).unwrap();
        assert_eq!(back, store);
        let mut dst = net(2);
        assert_eq!(back.load_into(&mut dst, "test", &|_| false).unwrap(), 6);
        assert_eq!(TensorStore::from_module(&dst).tensors, store.tensors);
    }

    #[test]
    fn missing_and_skipped_paths() {
        let mut store = TensorStore::from_module(&net(1));
        store.tensors.remove("fc.bias");
        let mut dst = net(2);
        assert!(matches!(store.load_into(&mut dst, "t", &|_| false), Err(Error::Checkpoint(_))));
        assert_eq!(store.load_into(&mut dst, "t", &|p| p.starts_with("fc")).unwrap(), 4);
    }
}
