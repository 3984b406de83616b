//! Retained posterior draws and their on-disk layout.
//!
//! A store directory holds:
//!
//! * `header.json`: dimensions, hyperparameters, seed and sampler settings.
//! * `tau.csv`, `mu.csv`: one row per retained draw, led by the sweep number.
//! * `log_joint.csv`: one row per sweep, burn-in included.
//! * `eta.bin`: magic `PCTMETA1`, then little-endian `u64` draws, N, K, then
//!   `draws * N * K` little-endian `f64` in draw, document, topic order.
//! * `z.bin`: magic `PCTMZ001`, then little-endian `u64` draws, G, then
//!   `draws * G` little-endian `u32` topics in draw, paragraph order.
//! * optionally `eta.csv` and `z.csv`, text copies of the binary blocks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PctmError, Result};
use crate::gibbs::SamplerOptions;
use crate::math::softmax;
use crate::state::{Hyperparameters, LatentState};

pub const HEADER_FILE: &str = "header.json";
pub const TAU_FILE: &str = "tau.csv";
pub const MU_FILE: &str = "mu.csv";
pub const LOG_JOINT_FILE: &str = "log_joint.csv";
pub const ETA_FILE: &str = "eta.bin";
pub const Z_FILE: &str = "z.bin";
pub const ETA_TEXT_FILE: &str = "eta.csv";
pub const Z_TEXT_FILE: &str = "z.csv";

const ETA_MAGIC: &[u8; 8] = b"PCTMETA1";
const Z_MAGIC: &[u8; 8] = b"PCTMZ001";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub n_docs: usize,
    pub n_paragraphs: usize,
    pub vocab_size: usize,
    pub k: usize,
    pub chain: usize,
    pub seed: u64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub init: String,
    pub options: SamplerOptions,
    pub kappa_shift: f64,
    pub kappa_scale: f64,
    pub hyper: Hyperparameters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    pub header: StoreHeader,
    /// Sweep number (1-based) of each retained draw.
    pub iterations: Vec<usize>,
    pub tau: Vec<[f64; 3]>,
    pub mu: Vec<Vec<f64>>,
    /// Each entry is N x K, row-major.
    pub eta: Vec<Vec<f64>>,
    pub z: Vec<Vec<u32>>,
    /// Every sweep, burn-in included.
    pub log_joint: Vec<f64>,
}

impl SampleStore {
    pub fn new(header: StoreHeader) -> Self {
        SampleStore {
            header,
            iterations: Vec::new(),
            tau: Vec::new(),
            mu: Vec::new(),
            eta: Vec::new(),
            z: Vec::new(),
            log_joint: Vec::new(),
        }
    }

    pub fn n_draws(&self) -> usize {
        self.iterations.len()
    }

    pub fn k(&self) -> usize {
        self.header.k
    }

    pub fn push_draw(&mut self, iteration: usize, state: &LatentState) {
        self.iterations.push(iteration);
        self.tau.push(state.tau);
        self.mu.push(state.mu.clone());
        self.eta.push(state.eta.clone());
        self.z.push(state.z.iter().map(|&z| z as u32).collect());
    }

    /// Renames topics so that new topic `t` is old topic `perm[t]`.
    pub fn relabel(&mut self, perm: &[usize]) {
        let k = self.header.k;
        assert_eq!(perm.len(), k, "relabel needs a permutation of the topics");
        let inv = crate::assign::invert(perm);
        for eta in &mut self.eta {
            for row in eta.chunks_mut(k) {
                let old = row.to_vec();
                for (t, e) in row.iter_mut().enumerate() {
                    *e = old[perm[t]];
                }
            }
        }
        for mu in &mut self.mu {
            let old = mu.clone();
            for (t, m) in mu.iter_mut().enumerate() {
                *m = old[perm[t]];
            }
        }
        for z in &mut self.z {
            for t in z.iter_mut() {
                *t = inv[*t as usize] as u32;
            }
        }
    }

    /// Most frequent topic of each paragraph across draws; ties go to the
    /// smaller topic index.
    pub fn modal_topics(&self) -> Vec<usize> {
        let k = self.header.k;
        let g = self.header.n_paragraphs;
        let mut counts = vec![0u32; g * k];
        for draw in &self.z {
            for (gg, &t) in draw.iter().enumerate() {
                counts[gg * k + t as usize] += 1;
            }
        }
        counts
            .chunks(k.max(1))
            .take(g)
            .map(|row| {
                let mut best = 0;
                for (t, &c) in row.iter().enumerate() {
                    if c > row[best] {
                        best = t;
                    }
                }
                best
            })
            .collect()
    }

    /// Posterior mean of `eta`, N x K.
    pub fn mean_eta(&self) -> Vec<f64> {
        mean_rows(&self.eta, self.header.n_docs * self.header.k)
    }

    /// Posterior mean of `softmax(eta_i)`, N x K.
    pub fn mean_theta(&self) -> Vec<f64> {
        let k = self.header.k;
        let thetas: Vec<Vec<f64>> = self
            .eta
            .iter()
            .map(|d| d.chunks(k).flat_map(softmax).collect())
            .collect();
        mean_rows(&thetas, self.header.n_docs * k)
    }

    pub fn mean_mu(&self) -> Vec<f64> {
        mean_rows(&self.mu, self.header.k)
    }

    pub fn mean_tau(&self) -> [f64; 3] {
        let rows: Vec<Vec<f64>> = self.tau.iter().map(|t| t.to_vec()).collect();
        let m = mean_rows(&rows, 3);
        [m[0], m[1], m[2]]
    }

    /// Writes the store into `dir`, returning the written paths.
    pub fn write(&self, dir: &Path, text_export: bool) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| PctmError::io(dir, e))?;
        let mut written = Vec::new();
        let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| PctmError::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        let header = serde_json::to_string_pretty(&self.header)
            .map_err(|e| PctmError::Numerical(format!("cannot encode store header: {e}")))?;
        put(HEADER_FILE, (header + "\n").as_bytes())?;

        let mut tau = String::from("iteration,tau0,tau1,tau2\n");
        for (t, row) in self.iterations.iter().zip(&self.tau) {
            let _ = writeln!(tau, "{t},{},{},{}", row[0], row[1], row[2]);
        }
        put(TAU_FILE, tau.as_bytes())?;

        let mut mu = String::from("iteration");
        for k in 0..self.header.k {
            let _ = write!(mu, ",mu{k}");
        }
        mu.push('\n');
        for (t, row) in self.iterations.iter().zip(&self.mu) {
            let _ = write!(mu, "{t}");
            for x in row {
                let _ = write!(mu, ",{x}");
            }
            mu.push('\n');
        }
        put(MU_FILE, mu.as_bytes())?;

        let mut lj = String::from("iteration,log_joint\n");
        for (t, v) in self.log_joint.iter().enumerate() {
            let _ = writeln!(lj, "{},{v}", t + 1);
        }
        put(LOG_JOINT_FILE, lj.as_bytes())?;

        let (n, k, g) = (self.header.n_docs, self.header.k, self.header.n_paragraphs);
        let mut eta = Vec::with_capacity(32 + self.eta.len() * n * k * 8);
        eta.extend_from_slice(ETA_MAGIC);
        for d in [self.eta.len(), n, k] {
            eta.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for draw in &self.eta {
            for x in draw {
                eta.extend_from_slice(&x.to_le_bytes());
            }
        }
        put(ETA_FILE, &eta)?;

        let mut z = Vec::with_capacity(24 + self.z.len() * g * 4);
        z.extend_from_slice(Z_MAGIC);
        for d in [self.z.len(), g] {
            z.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for draw in &self.z {
            for x in draw {
                z.extend_from_slice(&x.to_le_bytes());
            }
        }
        put(Z_FILE, &z)?;

        if text_export {
            let mut et = String::from("iteration,doc");
            for kk in 0..k {
                let _ = write!(et, ",eta{kk}");
            }
            et.push('\n');
            for (t, draw) in self.iterations.iter().zip(&self.eta) {
                for (i, row) in draw.chunks(k).enumerate() {
                    let _ = write!(et, "{t},{i}");
                    for x in row {
                        let _ = write!(et, ",{x}");
                    }
                    et.push('\n');
                }
            }
            put(ETA_TEXT_FILE, et.as_bytes())?;
            let mut zt = String::from("iteration,paragraph,topic\n");
            for (t, draw) in self.iterations.iter().zip(&self.z) {
                for (gg, x) in draw.iter().enumerate() {
                    let _ = writeln!(zt, "{t},{gg},{x}");
                }
            }
            put(Z_TEXT_FILE, zt.as_bytes())?;
        }
        Ok(written)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let read_text = |name: &str| -> Result<(PathBuf, String)> {
            let p = dir.join(name);
            let s = fs::read_to_string(&p).map_err(|e| PctmError::io(&p, e))?;
            Ok((p, s))
        };
        let (hp, hs) = read_text(HEADER_FILE)?;
        let header: StoreHeader = serde_json::from_str(&hs).map_err(|e| PctmError::Parse {
            path: hp,
            line: e.line(),
            msg: e.to_string(),
        })?;
        let k = header.k;

        let (tp, ts) = read_text(TAU_FILE)?;
        let tau_rows = parse_csv(&tp, &ts, 4)?;
        let iterations: Vec<usize> = tau_rows.iter().map(|r| r[0] as usize).collect();
        let tau = tau_rows.iter().map(|r| [r[1], r[2], r[3]]).collect();

        let (mp, ms) = read_text(MU_FILE)?;
        let mu = parse_csv(&mp, &ms, k + 1)?.into_iter().map(|r| r[1..].to_vec()).collect::<Vec<_>>();

        let (lp, ls) = read_text(LOG_JOINT_FILE)?;
        let log_joint = parse_csv(&lp, &ls, 2)?.into_iter().map(|r| r[1]).collect();

        let ep = dir.join(ETA_FILE);
        let eb = fs::read(&ep).map_err(|e| PctmError::io(&ep, e))?;
        let (dims, body) = split_binary(&ep, &eb, ETA_MAGIC, 3)?;
        let (nd, n, kk) = (dims[0], dims[1], dims[2]);
        if n != header.n_docs || kk != k || body.len() != nd * n * k * 8 {
            return Err(PctmError::Corruption(format!("{} has inconsistent dimensions", ep.display())));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let eta = if n * k == 0 {
            vec![Vec::new(); nd]
        } else {
            flat.chunks(n * k).map(|c| c.to_vec()).collect()
        };

        let zp = dir.join(Z_FILE);
        let zb = fs::read(&zp).map_err(|e| PctmError::io(&zp, e))?;
        let (dims, body) = split_binary(&zp, &zb, Z_MAGIC, 2)?;
        let (zd, g) = (dims[0], dims[1]);
        if g != header.n_paragraphs || body.len() != zd * g * 4 {
            return Err(PctmError::Corruption(format!("{} has inconsistent dimensions", zp.display())));
        }
        let zflat: Vec<u32> = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        let z = if g == 0 {
            vec![Vec::new(); zd]
        } else {
            zflat.chunks(g).map(|c| c.to_vec()).collect()
        };

        let store = SampleStore {
            header,
            iterations,
            tau,
            mu,
            eta,
            z,
            log_joint,
        };
        let nd = store.iterations.len();
        if store.mu.len() != nd || store.eta.len() != nd || store.z.len() != nd {
            return Err(PctmError::Corruption(format!(
                "{} holds differing draw counts across files",
                dir.display()
            )));
        }
        if store.z.iter().flatten().any(|&t| t as usize >= k) {
            return Err(PctmError::Corruption(format!("{} holds topics >= K", zp.display())));
        }
        Ok(store)
    }
}

fn mean_rows(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    let n = rows.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn parse_csv(path: &Path, text: &str, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        match row {
            Ok(r) if r.len() == width => out.push(r),
            _ => {
                return Err(PctmError::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    msg: format!("expected {width} numeric fields"),
                })
            }
        }
    }
    Ok(out)
}

fn split_binary<'a>(path: &Path, bytes: &'a [u8], magic: &[u8; 8], n_dims: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let head = 8 + 8 * n_dims;
    if bytes.len() < head || &bytes[..8] != magic {
        return Err(PctmError::Corruption(format!("{} is not a sample block", path.display())));
    }
    let dims = (0..n_dims)
        .map(|d| u64::from_le_bytes(bytes[8 + 8 * d..16 + 8 * d].try_into().expect("8 bytes")) as usize)
        .collect();
    Ok((dims, &bytes[head..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> StoreHeader {
        StoreHeader {
            n_docs: 2,
            n_paragraphs: 3,
            vocab_size: 4,
            k: 2,
            chain: 0,
            seed: 7,
            n_iter: 4,
            burn_in: 1,
            thin: 1,
            init: "random".into(),
            options: SamplerOptions::default(),
            kappa_shift: 0.0,
            kappa_scale: 1.0,
            hyper: Hyperparameters::defaults(2, 4),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let mut s = SampleStore::new(header());
        for t in 2..=4 {
            let st = LatentState {
                k: 2,
                z: vec![t % 2, 1, 0],
                eta: vec![0.1 * t as f64, -1.0 / 3.0, 1e-300, f64::MIN_POSITIVE],
                lambda: vec![1.0; 4],
                d_star: vec![],
                tau: [-2.0 / 7.0, 0.3, t as f64],
                mu: vec![std::f64::consts::PI, -0.0],
            };
            s.push_draw(t, &st);
        }
        s.log_joint = vec![-10.5, -9.25, -1.0 / 3.0, -8.0];
        let dir = tempfile::tempdir().unwrap();
        s.write(dir.path(), true).unwrap();
        let back = SampleStore::read(dir.path()).unwrap();
        assert_eq!(back, s);
        assert!(dir.path().join(Z_TEXT_FILE).exists());
    }

    #[test]
    fn truncated_block_is_corruption() {
        let mut s = SampleStore::new(header());
        s.push_draw(
            2,
            &LatentState {
                k: 2,
                z: vec![0, 1, 0],
                eta: vec![0.0; 4],
                lambda: vec![1.0; 4],
                d_star: vec![],
                tau: [0.0; 3],
                mu: vec![0.0; 2],
            },
        );
        let dir = tempfile::tempdir().unwrap();
        s.write(dir.path(), false).unwrap();
        let p = dir.path().join(ETA_FILE);
        let mut b = fs::read(&p).unwrap();
        b.truncate(b.len() - 3);
        fs::write(&p, b).unwrap();
        assert!(matches!(SampleStore::read(dir.path()), Err(PctmError::Corruption(_))));
    }

    #[test]
    fn relabel_permutes_consistently() {
        let mut h = header();
        h.k = 3;
        let mut s = SampleStore::new(h);
        s.push_draw(
            1,
            &LatentState {
                k: 3,
                z: vec![0, 1, 2],
                eta: vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0],
                lambda: vec![1.0; 6],
                d_star: vec![],
                tau: [0.0; 3],
                mu: vec![5.0, 6.0, 7.0],
            },
        );
        s.relabel(&[2, 0, 1]);
        assert_eq!(s.eta[0], vec![2.0, 0.0, 1.0, 12.0, 10.0, 11.0]);
        assert_eq!(s.mu[0], vec![7.0, 5.0, 6.0]);
        // old topic 2 is now topic 0
        assert_eq!(s.z[0], vec![1, 2, 0]);
    }
}
