use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Shard;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image file.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Truncated(format!("{what} header")))?;
    Ok(u32::from_be_bytes(b))
}

fn read_body<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(len);
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Truncated(format!("{what}: expected {len} bytes, found {}", buf.len())));
    }
    Ok(buf)
}

fn check_magic(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

pub fn read_idx_images<R: Read>(mut r: R) -> Result<IdxImages> {
    check_magic(read_u32(&mut r, "images")?, IMAGES_MAGIC)?;
    let count = read_u32(&mut r, "images")? as usize;
    let rows = read_u32(&mut r, "images")? as usize;
    let cols = read_u32(&mut r, "images")? as usize;
    let pixels = read_body(&mut r, count * rows * cols, "images")?;
    Ok(IdxImages { rows, cols, pixels })
}

pub fn read_idx_labels<R: Read>(mut r: R) -> Result<Vec<u8>> {
    check_magic(read_u32(&mut r, "labels")?, LABELS_MAGIC)?;
    let count = read_u32(&mut r, "labels")? as usize;
    read_body(&mut r, count, "labels")
}

pub fn write_idx_images<W: Write>(mut w: W, images: &IdxImages) -> Result<()> {
    for v in [IMAGES_MAGIC, images.count() as u32, images.rows as u32, images.cols as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(&images.pixels)?;
    Ok(())
}

pub fn write_idx_labels<W: Write>(mut w: W, labels: &[u8]) -> Result<()> {
    w.write_all(&LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}

/// Loads an image/label file pair with pixels scaled to `[0, 1]`.
pub fn load_idx<S: Real>(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Shard<S>> {
    let img = read_idx_images(BufReader::new(File::open(images)?))?;
    let lab = read_idx_labels(BufReader::new(File::open(labels)?))?;
    if img.count() != lab.len() {
        return Err(Error::CountMismatch {
            images: img.count(),
            labels: lab.len(),
        });
    }
    let scale = S::of(1.0 / 255.0);
    let features = img.pixels.iter().map(|p| S::of(*p as f64) * scale).collect();
    Shard::new(img.rows * img.cols, features, lab.into_iter().map(u32::from).collect())
}

/// Writes a pair of IDX files, e.g. for fixtures.
pub fn save_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, data: &IdxImages, label_bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(images)?);
    write_idx_images(&mut w, data)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(labels)?);
    write_idx_labels(&mut w, label_bytes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (IdxImages, Vec<u8>) {
        let mut pixels = vec![0u8; 4 * 28 * 28];
        for (i, p) in pixels.iter_mut().enumerate().skip(784) {
            *p = (i % 256) as u8;
        }
        (IdxImages { rows: 28, cols: 28, pixels }, vec![3, 1, 4, 1])
    }

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        save_idx(&ip, &lp, &img, &lab).unwrap();
        let shard: Shard<f64> = load_idx(&ip, &lp).unwrap();
        assert_eq!(shard.len(), 4);
        assert_eq!(shard.dim(), 784);
        assert!(shard.row(0).iter().all(|v| *v == 0.0));
        assert!(shard.features().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(shard.label(2), 4);
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = fixture();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        save_idx(&ip, &lp, &img, &[1, 2, 3]).unwrap();
        assert!(matches!(load_idx::<f64>(&ip, &lp), Err(Error::CountMismatch { images: 4, labels: 3 })));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let (img, lab) = fixture();
        let mut bytes = Vec::new();
        write_idx_labels(&mut bytes, &lab).unwrap();
        assert!(matches!(read_idx_images(&bytes[..]), Err(Error::BadMagic { .. })));
        let mut bytes = Vec::new();
        write_idx_images(&mut bytes, &img).unwrap();
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(read_idx_images(&bytes[..]), Err(Error::Truncated(_))));
        assert!(matches!(read_idx_labels(&[0u8, 0][..]), Err(Error::Truncated(_))));
    }
}
