//! Binary tensor container shared by datasets and checkpoints.
//!
//! Layout (little-endian): magic `HYAD`, `u32` version, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name, `u32` ndim, `u64` dims and
//! the payload. The first entry is always `manifest`, a rank-1 byte array
//! holding a JSON document; every other payload is raw `f64` data.

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"HYAD";
pub const VERSION: u32 = 1;
const MANIFEST: &str = "manifest";

/// Parsed container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub manifest: Value,
    pub arrays: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(manifest: Value) -> Self {
        Container { manifest, arrays: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.arrays.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Malformed(format!("missing array `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32 + 1).to_le_bytes());
        write_header(&mut out, MANIFEST, &[manifest.len()]);
        out.extend_from_slice(&manifest);
        for (name, t) in &self.arrays {
            if name == MANIFEST {
                return Err(Error::InvalidArgument("`manifest` is a reserved entry name".into()));
            }
            write_header(&mut out, name, t.shape());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("four bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic { expected: MAGIC, found: magic });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Version { expected: VERSION, found: version });
        }
        let count = r.u32("entry count")? as usize;
        if count == 0 {
            return Err(Error::Malformed("container has no manifest".into()));
        }
        let (name, dims) = r.header()?;
        if name != MANIFEST || dims.len() != 1 {
            return Err(Error::Malformed(format!("first entry must be the manifest, found `{name}`")));
        }
        let manifest: Value = serde_json::from_slice(r.take(dims[0], "manifest")?)?;
        let mut arrays = Vec::with_capacity(count - 1);
        for _ in 1..count {
            let (name, dims) = r.header()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Malformed("array too large".into()))?, &name)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
            arrays.push((name, Tensor::new(dims, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Container { manifest, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes)
    }
}

fn write_header(out: &mut Vec<u8>, name: &str, dims: &[usize]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("{what} needs {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("eight bytes")))
    }

    fn header(&mut self) -> Result<(String, Vec<usize>)> {
        let len = self.u32("name length")? as usize;
        let name = String::from_utf8(self.take(len, "name")?.to_vec())
            .map_err(|_| Error::Malformed("entry name is not UTF-8".into()))?;
        let ndim = self.u32("ndim")? as usize;
        if ndim > 16 {
            return Err(Error::Malformed(format!("entry `{name}` claims {ndim} dimensions")));
        }
        let dims = (0..ndim).map(|_| self.u64("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        Ok((name, dims))
    }
}
