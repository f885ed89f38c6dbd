//! Weight container: a plain-text header followed by little-endian `f64` data.
//!
//! ```text
//! goalcc-weights
//! version 1
//! meta <key> <value to end of line>
//! tensor <name> <d0>x<d1>x... <element count>
//! end
//! <raw f64 LE bytes, tensors in header order>
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Cursor, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "goalcc-weights";
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(format!("{MAGIC}\nversion {FORMAT_VERSION}\n").as_bytes());
        for (k, v) in &self.meta {
            debug_assert!(!k.contains(char::is_whitespace) && !v.contains('\n'));
            out.extend_from_slice(format!("meta {k} {v}\n").as_bytes());
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            out.extend_from_slice(format!("tensor {name} {} {}\n", dims.join("x"), t.len()).as_bytes());
        }
        out.extend_from_slice(b"end\n");
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut r = BufReader::new(reader);
        let mut line = String::new();
        let next_line = |r: &mut BufReader<_>, line: &mut String| -> Result<()> {
            line.clear();
            let n = r.read_line(line)?;
            if n == 0 || !line.ends_with('\n') {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "checkpoint header truncated",
                )
                .into());
            }
            line.pop();
            Ok(())
        };

        next_line(&mut r, &mut line)?;
        if line != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {line:?}")));
        }
        next_line(&mut r, &mut line)?;
        match line.strip_prefix("version ") {
            Some(v) if v == FORMAT_VERSION => {}
            Some(v) => {
                return Err(Error::VersionMismatch {
                    found: v.to_string(),
                    expected: FORMAT_VERSION.to_string(),
                })
            }
            None => return Err(Error::Checkpoint(format!("expected version line, got {line:?}"))),
        }

        let mut out = Container::default();
        let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            next_line(&mut r, &mut line)?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                out.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 3 {
                    return Err(Error::Checkpoint(format!("bad tensor line {line:?}")));
                }
                let dims = parts[1]
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Checkpoint(format!("bad dims in {line:?}")))?;
                let count: usize = parts[2]
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad count in {line:?}")))?;
                if dims.iter().product::<usize>() != count {
                    return Err(Error::Checkpoint(format!("count disagrees with dims in {line:?}")));
                }
                specs.push((parts[0].to_string(), dims));
            } else {
                return Err(Error::Checkpoint(format!("unexpected header line {line:?}")));
            }
        }

        let mut buf = [0u8; 8];
        for (name, dims) in specs {
            let n: usize = dims.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            out.tensors.push((name, Tensor::from_vec(&dims, data)?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_reader(Cursor::new(bytes)).map_err(|e| match e {
            Error::RawIo(source) => Error::io(path, source),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn container_roundtrip_is_bit_exact(vals in prop::collection::vec(any::<f64>(), 1..40), split in 0usize..40) {
            let split = split.min(vals.len());
            let a = Tensor::from_vec(&[split], vals[..split].to_vec()).unwrap();
            let b = Tensor::from_vec(&[1, vals.len() - split], vals[split..].to_vec()).unwrap();
            let c = Container {
                meta: vec![("config".into(), "{\"x\": 1}".into())],
                tensors: vec![("a".into(), a), ("b.w".into(), b)],
            };
            let back = Container::from_reader(Cursor::new(c.to_bytes())).unwrap();
            prop_assert_eq!(back.meta, c.meta);
            for ((n1, t1), (n2, t2)) in back.tensors.iter().zip(&c.tensors) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let bits1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let bits2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits1, bits2);
            }
        }
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let c = Container {
            meta: vec![],
            tensors: vec![("w".into(), Tensor::zeros(&[4]))],
        };
        let bytes = c.to_bytes();
        let err = Container::from_reader(Cursor::new(&bytes[..bytes.len() - 3])).unwrap_err();
        assert!(err.is_io(), "{err}");
    }

    #[test]
    fn other_version_rejected() {
        let text = b"goalcc-weights\nversion 7\nend\n";
        assert!(matches!(
            Container::from_reader(Cursor::new(&text[..])),
            Err(Error::VersionMismatch { .. })
        ));
    }
}
