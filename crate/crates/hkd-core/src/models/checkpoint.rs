//! Model checkpoint files.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset 0   magic        b"HKDM"
//! offset 4   version      u16       (currently 1)
//! offset 6   model kind   u8        (0 = teacher, 1 = student)
//! offset 7   parameter records until end of file, each:
//!              name length   u16
//!              name bytes    UTF-8
//!              shape         4 × u32   (batch, maps, height, width)
//!              values        shape-product × f32, little-endian
//! ```
//!
//! Parameters are written in the model's canonical order; loading matches
//! records to the target model by name and verifies every shape.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::models::{ModelDims, StudentModel, TeacherModel};
use crate::tensor::{Scalar, Shape4, Tensor4};

pub const MAGIC: [u8; 4] = *b"HKDM";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Teacher = 0,
    Student = 1,
}

impl ModelKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(ModelKind::Teacher),
            1 => Some(ModelKind::Student),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic at offset 0: expected \"HKDM\", got {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} at offset 4")]
    BadVersion(u16),
    #[error("unknown model kind byte {0} at offset 6")]
    BadKind(u8),
    #[error("checkpoint is a {got:?} model, expected {expected:?}")]
    WrongKind { expected: ModelKind, got: ModelKind },
    #[error("truncated record at offset {offset}: {context}")]
    Truncated { offset: u64, context: String },
    #[error("parameter '{name}' has shape {got}, model expects {expected}")]
    ShapeMismatch { name: String, expected: Shape4, got: Shape4 },
    #[error("checkpoint parameter '{0}' not known to the target model")]
    UnknownParameter(String),
    #[error("model parameter '{0}' missing from checkpoint")]
    MissingParameter(String),
    #[error("parameter name at offset {offset} is not UTF-8")]
    BadName { offset: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn save<T: Scalar>(
    path: &Path,
    kind: ModelKind,
    params: &[(&str, &Tensor4<T>)],
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[kind as u8])?;
    for (name, tensor) in params {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        let s = tensor.shape();
        for dim in [s.batch, s.maps, s.height, s.width] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &v in tensor.values() {
            w.write_all(&(v.into_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Counted<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counted<R> {
    fn read_exact_at(&mut self, buf: &mut [u8], context: &str) -> Result<(), CheckpointError> {
        let start = self.offset;
        let mut filled = 0;
        while filled < buf.len() {
            let n = self.inner.read(&mut buf[filled..])?;
            if n == 0 {
                return Err(CheckpointError::Truncated {
                    offset: start + filled as u64,
                    context: format!("{context}: expected {} more bytes", buf.len() - filled),
                });
            }
            filled += n;
            self.offset += n as u64;
        }
        Ok(())
    }

    /// Returns false on a clean EOF at a record boundary.
    fn try_read_u16(&mut self) -> Result<Option<u16>, CheckpointError> {
        let mut buf = [0u8; 2];
        let n = self.inner.read(&mut buf[..1])?;
        if n == 0 {
            return Ok(None);
        }
        self.offset += 1;
        self.read_exact_at(&mut buf[1..], "record length")?;
        Ok(Some(u16::from_le_bytes(buf)))
    }
}

/// Reads the full checkpoint: kind plus all named parameter tensors.
pub fn load(path: &Path) -> Result<(ModelKind, Vec<(String, Tensor4<f32>)>), CheckpointError> {
    let mut r = Counted { inner: BufReader::new(File::open(path)?), offset: 0 };

    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let mut v = [0u8; 2];
    r.read_exact_at(&mut v, "version")?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut kind_byte = [0u8; 1];
    r.read_exact_at(&mut kind_byte, "model kind")?;
    let kind = ModelKind::from_byte(kind_byte[0]).ok_or(CheckpointError::BadKind(kind_byte[0]))?;

    let mut params = Vec::new();
    while let Some(name_len) = r.try_read_u16()? {
        let name_offset = r.offset;
        let mut name_bytes = vec![0u8; name_len as usize];
        r.read_exact_at(&mut name_bytes, "parameter name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::BadName { offset: name_offset })?;

        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact_at(&mut b, &format!("shape of '{name}'"))?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3]);
        let mut values = vec![0f32; shape.len()];
        for v in values.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact_at(&mut b, &format!("values of '{name}'"))?;
            *v = f32::from_le_bytes(b);
        }
        params.push((name, Tensor4::from_vec(shape, values).expect("length matches")));
    }
    Ok((kind, params))
}

fn fill_from_records<T: Scalar>(
    targets: Vec<&mut crate::models::Param<T>>,
    records: Vec<(String, Tensor4<f32>)>,
) -> Result<(), CheckpointError> {
    let mut by_name: std::collections::BTreeMap<String, Tensor4<f32>> = records.into_iter().collect();
    for param in targets {
        let tensor = by_name
            .remove(&param.name)
            .ok_or_else(|| CheckpointError::MissingParameter(param.name.clone()))?;
        if tensor.shape() != param.value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: param.name.clone(),
                expected: param.value.shape(),
                got: tensor.shape(),
            });
        }
        param.value = tensor.cast();
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(CheckpointError::UnknownParameter(name));
    }
    Ok(())
}

pub fn save_teacher<T: Scalar>(path: &Path, model: &TeacherModel<T>) -> Result<(), CheckpointError> {
    let params = model.params();
    let named: Vec<(&str, &Tensor4<T>)> = params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
    save(path, ModelKind::Teacher, &named)
}

pub fn save_student<T: Scalar>(path: &Path, model: &StudentModel<T>) -> Result<(), CheckpointError> {
    let params = model.params();
    let named: Vec<(&str, &Tensor4<T>)> = params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
    save(path, ModelKind::Student, &named)
}

/// Loads a teacher checkpoint into a model of the given dimensions.
pub fn load_teacher<T: Scalar>(path: &Path, dims: ModelDims) -> Result<TeacherModel<T>, CheckpointError> {
    let (kind, records) = load(path)?;
    if kind != ModelKind::Teacher {
        return Err(CheckpointError::WrongKind { expected: ModelKind::Teacher, got: kind });
    }
    let mut model = TeacherModel::<T>::init(dims, 0);
    fill_from_records(model.params_mut(), records)?;
    Ok(model)
}

pub fn load_student<T: Scalar>(path: &Path, dims: ModelDims) -> Result<StudentModel<T>, CheckpointError> {
    let (kind, records) = load(path)?;
    if kind != ModelKind::Student {
        return Err(CheckpointError::WrongKind { expected: ModelKind::Student, got: kind });
    }
    let mut model = StudentModel::<T>::init(dims, 0);
    fill_from_records(model.params_mut(), records)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_roundtrip_is_exact() {
        let dims = ModelDims::shrunken();
        let model = TeacherModel::<f32>::init(dims, 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.hkdm");
        save_teacher(&path, &model).unwrap();
        let loaded = load_teacher::<f32>(&path, dims).unwrap();
        for (a, b) in model.params().iter().zip(loaded.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.values(), b.value.values());
        }
    }

    #[test]
    fn student_kind_is_enforced() {
        let dims = ModelDims::shrunken();
        let model = StudentModel::<f32>::init(dims, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("student.hkdm");
        save_student(&path, &model).unwrap();
        assert!(matches!(
            load_teacher::<f32>(&path, dims),
            Err(CheckpointError::WrongKind { .. })
        ));
        assert!(load_student::<f32>(&path, dims).is_ok());
    }

    #[test]
    fn bad_magic_and_truncation_are_positioned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hkdm");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::BadMagic(_))));

        // valid header then a truncated record
        let dims = ModelDims::shrunken();
        let model = StudentModel::<f32>::init(dims, 1);
        let good = dir.path().join("good.hkdm");
        save_student(&good, &model).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        std::fs::write(&path, cut).unwrap();
        match load(&path) {
            Err(CheckpointError::Truncated { offset, .. }) => {
                assert!(offset as usize <= cut.len());
                assert!(offset > 7);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }
}
