//! Binary PGM (P5) emission for spectrograms and attention alignments.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn pixel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    debug_assert_eq!(pixels.len(), width * height);
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{width} {height}\n255\n").map_err(|e| Error::io(path, e))?;
    w.write_all(pixels).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Emit a [T, F] frame matrix as a P5 PGM, width = T, height = F, with
/// channel 0 on the bottom row.
pub fn emit_spectrogram_pgm(frames: &Tensor, path: &Path) -> Result<()> {
    let (t_len, f_dim) = (frames.rows(), frames.cols());
    let mut pixels = Vec::with_capacity(t_len * f_dim);
    for ch in (0..f_dim).rev() {
        for t in 0..t_len {
            pixels.push(pixel(frames.get2(t, ch)));
        }
    }
    write_pgm(path, t_len, f_dim, &pixels)
}

/// Emit a [T, S] alignment matrix as a P5 PGM, width = T, height = S, with
/// encoder position 0 on the bottom row.
pub fn emit_alignment_pgm(alignment: &Tensor, path: &Path) -> Result<()> {
    let (t_len, s_len) = (alignment.rows(), alignment.cols());
    let mut pixels = Vec::with_capacity(t_len * s_len);
    for pos in (0..s_len).rev() {
        for t in 0..t_len {
            pixels.push(pixel(alignment.get2(t, pos)));
        }
    }
    write_pgm(path, t_len, s_len, &pixels)
}

/// Parse a P5 PGM back into (width, height, pixels); used by round-trip tests
/// and diagnostics.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::CorpusFormat {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    // header: "P5\n{w} {h}\n255\n"
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(&bytes[start..pos]);
    }
    if fields.len() != 4 || fields[0] != b"P5" {
        return Err(bad("not a P5 PGM"));
    }
    let parse = |b: &[u8]| -> Result<usize> {
        std::str::from_utf8(b)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header field"))
    };
    let width = parse(fields[1])?;
    let height = parse(fields[2])?;
    if parse(fields[3])? != 255 {
        return Err(bad("maxval must be 255"));
    }
    pos += 1; // single whitespace byte after maxval
    if bytes.len() - pos != width * height {
        return Err(bad("pixel payload size mismatch"));
    }
    Ok((width, height, bytes[pos..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_extremes_and_rounding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pgm");
        let t = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        emit_spectrogram_pgm(&t, &path).unwrap();
        let (w, h, px) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (1, 1));
        assert_eq!(px, vec![255]);

        // 0.5 rounds half away from zero -> 128
        let t = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        emit_spectrogram_pgm(&t, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap().2, vec![128]);
    }

    #[test]
    fn file_size_is_header_plus_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("size.pgm");
        let frames = Tensor::new(vec![7, 4], vec![0.25; 28]).unwrap();
        emit_spectrogram_pgm(&frames, &path).unwrap();
        let header = format!("P5\n{} {}\n255\n", 7, 4);
        let expect = header.len() + 7 * 4;
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, expect);
    }

    #[test]
    fn round_trip_recovers_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.pgm");
        let values: Vec<f64> = (0..24).map(|i| i as f64 / 23.0).collect();
        let frames = Tensor::new(vec![6, 4], values.clone()).unwrap();
        emit_spectrogram_pgm(&frames, &path).unwrap();
        let (w, h, px) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (6, 4));
        // channel 0 is the bottom row of the image
        for t in 0..6 {
            for ch in 0..4 {
                let png_row = 4 - 1 - ch;
                let expect = (values[t * 4 + ch] * 255.0).round() as u8;
                assert_eq!(px[png_row * 6 + t], expect);
            }
        }
    }
}
