//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!   magic "PFCK", version u32 = 1, tensor count u32, then per tensor:
//!   name length u16 + UTF-8 name, rank u8, dims (u32 each), values as
//!   little-endian IEEE-754 f64. One presence flag byte follows; when 1, an
//!   optimizer-state section: step u64, beta1/beta2/eps f64, then first and
//!   second moments per tensor in order (values only; shapes mirror the
//!   tensors). Writes are atomic (temp file + rename).

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::{AdamState, Params};
use crate::tensor::Tensor;

pub const CKPT_MAGIC: &[u8; 4] = b"PFCK";
pub const CKPT_VERSION: u32 = 1;

pub fn save_checkpoint(params: &Params, optimizer: Option<&AdamState>, path: &Path) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp_path = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp_path).map_err(|e| Error::io(&tmp_path, e))?;
        let mut w = BufWriter::new(file);
        write_body(&mut w, params, optimizer).map_err(|e| Error::io(&tmp_path, e))?;
        w.flush().map_err(|e| Error::io(&tmp_path, e))?;
    }
    fs::rename(&tmp_path, path).map_err(|e| Error::io(path, e))
}

fn write_body<W: Write>(w: &mut W, params: &Params, optimizer: Option<&AdamState>) -> io::Result<()> {
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[p.value.rank() as u8])?;
        for &d in p.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in p.value.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    match optimizer {
        None => w.write_all(&[0u8])?,
        Some(opt) => {
            w.write_all(&[1u8])?;
            w.write_all(&opt.step_count().to_le_bytes())?;
            w.write_all(&opt.beta1.to_le_bytes())?;
            w.write_all(&opt.beta2.to_le_bytes())?;
            w.write_all(&opt.eps.to_le_bytes())?;
            let (m, v) = opt.moments();
            for t in m.iter().chain(v.iter()) {
                for &x in t.values() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

struct CkptReader<R: Read> {
    inner: R,
    /// Name of the tensor currently being read, for truncation errors.
    context: String,
}

impl<R: Read> CkptReader<R> {
    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                Error::CkptTruncated(self.context.clone())
            } else {
                Error::io(&self.context, e)
            }
        })
    }

    fn u16_le(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32_le(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64_le(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64_le(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.f64_le()?);
        }
        Ok(out)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(Params, Option<AdamState>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = CkptReader {
        inner: BufReader::new(file),
        context: "header".to_string(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::CkptBadMagic);
    }
    let version = r.u32_le()?;
    if version != CKPT_VERSION {
        return Err(Error::CkptVersion(version));
    }
    let count = r.u32_le()? as usize;

    let mut params = Params::new();
    for i in 0..count {
        r.context = format!("tensor #{i} name");
        let name_len = r.u16_le()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::CkptTruncated(format!("tensor #{i} name (invalid UTF-8)")))?;
        r.context = name.clone();
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(r.u32_le()? as usize);
        }
        let numel: usize = shape.iter().product();
        let values = r.f64_vec(numel)?;
        params.add(&name, Tensor::new(shape, values)?)?;
    }

    r.context = "optimizer flag".to_string();
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let optimizer = match flag[0] {
        0 => None,
        1 => {
            r.context = "optimizer state".to_string();
            let step = r.u64_le()?;
            let beta1 = r.f64_le()?;
            let beta2 = r.f64_le()?;
            let eps = r.f64_le()?;
            let mut read_moments = |what: &str, r: &mut CkptReader<BufReader<fs::File>>| -> Result<Vec<Tensor>> {
                let mut out = Vec::with_capacity(params.len());
                for i in 0..params.len() {
                    let p = params.get(i);
                    r.context = format!("optimizer {what} for `{}`", p.name);
                    let values = r.f64_vec(p.value.numel())?;
                    out.push(Tensor::new(p.value.shape().to_vec(), values)?);
                }
                Ok(out)
            };
            let m = read_moments("first moment", &mut r)?;
            let v = read_moments("second moment", &mut r)?;
            Some(AdamState::from_parts(m, v, step, beta1, beta2, eps))
        }
        other => {
            return Err(Error::CorpusFormat {
                path: path.to_path_buf(),
                msg: format!("bad optimizer presence flag {other}"),
            })
        }
    };
    Ok((params, optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_params(seed: u64) -> Params {
        let mut rng = crate::rng::seeded(seed);
        let mut params = Params::new();
        params
            .add(
                "a.w",
                Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            )
            .unwrap();
        params
            .add(
                "b.vec",
                Tensor::new(vec![5], (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            )
            .unwrap();
        params
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pfck");
        let params = random_params(3);
        save_checkpoint(&params, None, &path).unwrap();
        let (loaded, opt) = load_checkpoint(&path).unwrap();
        assert!(opt.is_none());
        assert_eq!(loaded.len(), params.len());
        for i in 0..params.len() {
            assert_eq!(loaded.get(i).name, params.get(i).name);
            assert_eq!(loaded.get(i).value.shape(), params.get(i).value.shape());
            let same = loaded
                .get(i)
                .value
                .values()
                .iter()
                .zip(params.get(i).value.values())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same);
        }
        // save(load(x)) == save(x) byte-for-byte
        let path2 = dir.path().join("model2.pfck");
        save_checkpoint(&loaded, None, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn optimizer_state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pfck");
        let mut params = random_params(4);
        let mut adam = AdamState::new(&params);
        params.get_mut(0).grad.values_mut().fill(0.5);
        adam.apply(&mut params, 1e-3).unwrap();
        save_checkpoint(&params, Some(&adam), &path).unwrap();
        let (_loaded, opt) = load_checkpoint(&path).unwrap();
        let opt = opt.expect("optimizer section present");
        assert_eq!(opt.step_count(), 1);
        assert_eq!(opt.beta1, adam.beta1);
        let (m, _v) = opt.moments();
        let (m0, _) = adam.moments();
        assert_eq!(m[0], m0[0]);
    }

    #[test]
    fn corrupted_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pfck");
        save_checkpoint(&random_params(5), None, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CkptBadMagic)));
    }

    #[test]
    fn unsupported_version_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pfck");
        save_checkpoint(&random_params(5), None, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CkptVersion(9))));
    }

    #[test]
    fn truncation_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pfck");
        save_checkpoint(&random_params(5), None, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        // cut inside the first tensor's values
        let cut = 4 + 4 + 4 + 2 + 3 + 1 + 8 + 5 * 8;
        fs::write(&path, &bytes[..cut]).unwrap();
        match load_checkpoint(&path) {
            Err(Error::CkptTruncated(name)) => assert_eq!(name, "a.w"),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }
}
