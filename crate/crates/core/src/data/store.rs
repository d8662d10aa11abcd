use std::io::{Read, Write};

use super::{FederatedDataset, Shard, UserData};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DATASET_MAGIC: u32 = 0x4450_4644;
pub const DATASET_VERSION: u32 = 1;

/// Fixed header of the binary dataset format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub users: u64,
    /// Records per user before the train/test split.
    pub records: u64,
    pub dim: u64,
    pub classes: u64,
    pub seed: u64,
}

// Layout, all little-endian: magic u32, version u32, the five header fields
// as u64, then per user n_train u64, n_test u64, followed by every shard's
// features as f64 and labels as u32 (train then test, user by user).

/// Serializes a dataset; features are stored as f64 regardless of `S`.
pub fn write_dataset<S: Real, W: Write>(mut w: W, data: &FederatedDataset<S>, seed: u64) -> Result<()> {
    let records = data.users().iter().map(|u| u.train.len() + u.test.len()).max().unwrap_or(0);
    w.write_all(&DATASET_MAGIC.to_le_bytes())?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    for v in [data.num_users(), records, data.dim(), data.num_classes()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&seed.to_le_bytes())?;
    for u in data.users() {
        w.write_all(&(u.train.len() as u64).to_le_bytes())?;
        w.write_all(&(u.test.len() as u64).to_le_bytes())?;
    }
    for u in data.users() {
        for shard in [&u.train, &u.test] {
            for v in shard.features() {
                w.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
            for l in shard.labels() {
                w.write_all(&l.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| Error::Truncated("dataset file".into()))?;
    Ok(b)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    read_exact::<8, _>(r).map(u64::from_le_bytes)
}

pub fn read_dataset<S: Real, R: Read>(mut r: R) -> Result<(FederatedDataset<S>, DatasetHeader)> {
    let magic = u32::from_le_bytes(read_exact::<4, _>(&mut r)?);
    if magic != DATASET_MAGIC {
        return Err(Error::BadMagic {
            expected: DATASET_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(read_exact::<4, _>(&mut r)?);
    if version != DATASET_VERSION {
        return Err(Error::Version(version));
    }
    let header = DatasetHeader {
        users: read_u64(&mut r)?,
        records: read_u64(&mut r)?,
        dim: read_u64(&mut r)?,
        classes: read_u64(&mut r)?,
        seed: read_u64(&mut r)?,
    };
    let dim = header.dim as usize;
    let mut sizes = Vec::with_capacity(header.users as usize);
    for _ in 0..header.users {
        sizes.push((read_u64(&mut r)? as usize, read_u64(&mut r)? as usize));
    }
    let mut read_shard = |n: usize| -> Result<Shard<S>> {
        let mut features = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            features.push(S::of(f64::from_le_bytes(read_exact::<8, _>(&mut r)?)));
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(u32::from_le_bytes(read_exact::<4, _>(&mut r)?));
        }
        Shard::new(dim, features, labels)
    };
    let mut users = Vec::with_capacity(sizes.len());
    for (n_train, n_test) in sizes {
        let train = read_shard(n_train)?;
        let test = read_shard(n_test)?;
        users.push(UserData { train, test });
    }
    Ok((FederatedDataset::new(users, dim, header.classes as usize)?, header))
}

/// CSV with header `user,split,label,f0,...`.
pub fn export_csv<S: Real, W: Write>(mut w: W, data: &FederatedDataset<S>) -> Result<()> {
    let mut header = String::from("user,split,label");
    for j in 0..data.dim() {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(w, "{header}")?;
    for (u, user) in data.users().iter().enumerate() {
        for (split, shard) in [("train", &user.train), ("test", &user.test)] {
            for (x, y) in shard.iter() {
                write!(w, "{u},{split},{y}")?;
                for v in x {
                    write!(w, ",{}", v.to_f64_lossy())?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    #[test]
    fn binary_round_trip_is_exact() {
        let cfg = SynthConfig::new(3, 10, 1.0, 1.0, 77);
        let data: FederatedDataset<f64> = synth_generate(&cfg).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &data, cfg.seed).unwrap();
        let (back, header) = read_dataset::<f64, _>(&bytes[..]).unwrap();
        assert_eq!(back, data);
        assert_eq!(
            header,
            DatasetHeader {
                users: 3,
                records: 10,
                dim: 40,
                classes: 10,
                seed: 77
            }
        );
        let mut again = Vec::new();
        write_dataset(&mut again, &back, cfg.seed).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_files_rejected() {
        let cfg = SynthConfig::new(2, 5, 0.0, 0.0, 1);
        let data: FederatedDataset<f64> = synth_generate(&cfg).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &data, 1).unwrap();
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(matches!(read_dataset::<f64, _>(&bad[..]), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_dataset::<f64, _>(&bad[..]), Err(Error::Version(9))));
        assert!(matches!(read_dataset::<f64, _>(&bytes[..bytes.len() - 2]), Err(Error::Truncated(_))));
    }

    #[test]
    fn csv_has_expected_shape() {
        let cfg = SynthConfig {
            dim: 3,
            ..SynthConfig::new(2, 5, 0.0, 0.0, 1)
        };
        let data: FederatedDataset<f64> = synth_generate(&cfg).unwrap();
        let mut out = Vec::new();
        export_csv(&mut out, &data).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "user,split,label,f0,f1,f2");
        assert_eq!(lines.len(), 11);
        assert!(lines[1].starts_with("0,train,"));
        assert_eq!(lines[1].split(',').count(), 6);
    }
}
