//! File formats: the binary channel/measurement container and JSON documents
//! for impairment sets and dictionaries (complex numbers as `[re, im]`
//! pairs). All binary payloads are little-endian.

use crate::channel::ChannelFD;
use crate::estimator::DictionarySet;
use crate::real::Real;
use crate::sounding::MeasurementSet;
use crate::sysmodel::{AngleGrid, HardwareImpairments};
use crate::{CMat, CVec, C};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad container format: {0}")]
    Format(String),
}

const MAGIC: &[u8; 4] = b"SQNT";
const VERSION: u8 = 1;
/// Content nibble of the layout tag.
const CONTENT_CHANNEL: u8 = 0x10;
const CONTENT_MEASUREMENT: u8 = 0x20;

fn write_header<W: Write>(
    w: &mut W,
    content: u8,
    precision: u8,
    dims: [u32; 3],
) -> Result<(), IoError> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, content | precision])?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R, content: u8, precision: u8) -> Result<[u32; 3], IoError> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[0..4] != MAGIC {
        return Err(IoError::Format("bad magic".into()));
    }
    if head[4] != VERSION {
        return Err(IoError::Format(format!("unsupported version {}", head[4])));
    }
    if head[5] != content | precision {
        return Err(IoError::Format(format!(
            "layout tag {:#04x} does not match expected {:#04x}",
            head[5],
            content | precision
        )));
    }
    let mut dims = [0u32; 3];
    for d in &mut dims {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b);
    }
    Ok(dims)
}

fn write_complex_row_major<T: Real, W: Write>(w: &mut W, m: &CMat<T>) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(m.len() * 2 * T::BYTE_WIDTH);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)].re.write_le(&mut buf);
            m[(i, j)].im.write_le(&mut buf);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_complex_row_major<T: Real, R: Read>(
    r: &mut R,
    rows: usize,
    cols: usize,
) -> Result<CMat<T>, IoError> {
    let mut buf = vec![0u8; rows * cols * 2 * T::BYTE_WIDTH];
    r.read_exact(&mut buf)?;
    let w = T::BYTE_WIDTH;
    let mut m = CMat::<T>::zeros(rows, cols);
    let mut off = 0usize;
    for i in 0..rows {
        for j in 0..cols {
            let re = T::read_le(&buf[off..off + w]);
            let im = T::read_le(&buf[off + w..off + 2 * w]);
            m[(i, j)] = C::new(re, im);
            off += 2 * w;
        }
    }
    Ok(m)
}

/// Write a frequency-domain channel: header `(K, N_R, N_T, tag)` then the
/// per-subcarrier matrices in row-major order.
pub fn write_channel<T: Real, W: Write>(w: &mut W, h: &ChannelFD<T>) -> Result<(), IoError> {
    write_header(
        w,
        CONTENT_CHANNEL,
        T::PRECISION_TAG,
        [h.k() as u32, h.n_r() as u32, h.n_t() as u32],
    )?;
    for m in &h.h {
        write_complex_row_major(w, m)?;
    }
    Ok(())
}

pub fn read_channel<T: Real, R: Read>(r: &mut R) -> Result<ChannelFD<T>, IoError> {
    let [k, n_r, n_t] = read_header(r, CONTENT_CHANNEL, T::PRECISION_TAG)?;
    let mut h = Vec::with_capacity(k as usize);
    for _ in 0..k {
        h.push(read_complex_row_major(r, n_r as usize, n_t as usize)?);
    }
    Ok(ChannelFD { h })
}

/// Write a measurement batch: header `(K, M*L_R, 1, tag)`, then location,
/// spreading, noise variance, then the stacked measurement vectors per
/// subcarrier.
pub fn write_measurements<T: Real, W: Write>(
    w: &mut W,
    m: &MeasurementSet<T>,
) -> Result<(), IoError> {
    let rows = m.y.first().map_or(0, CVec::len);
    write_header(
        w,
        CONTENT_MEASUREMENT,
        T::PRECISION_TAG,
        [m.y.len() as u32, rows as u32, 1],
    )?;
    w.write_all(&(m.location as u32).to_le_bytes())?;
    w.write_all(&(m.spreading as u32).to_le_bytes())?;
    let mut buf = Vec::new();
    m.sigma2.write_le(&mut buf);
    w.write_all(&buf)?;
    for v in &m.y {
        let col = CMat::from_column_slice(v.len(), 1, v.as_slice());
        write_complex_row_major(w, &col)?;
    }
    Ok(())
}

pub fn read_measurements<T: Real, R: Read>(r: &mut R) -> Result<MeasurementSet<T>, IoError> {
    let [k, rows, _] = read_header(r, CONTENT_MEASUREMENT, T::PRECISION_TAG)?;
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let location = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let spreading = u32::from_le_bytes(b4) as usize;
    let mut bs = vec![0u8; T::BYTE_WIDTH];
    r.read_exact(&mut bs)?;
    let sigma2 = T::read_le(&bs);
    let mut y = Vec::with_capacity(k as usize);
    for _ in 0..k {
        let col = read_complex_row_major(r, rows as usize, 1)?;
        y.push(CVec::from_column_slice(col.as_slice()));
    }
    Ok(MeasurementSet {
        y,
        sigma2,
        spreading,
        location,
    })
}

/// Complex matrix as row-major nested `[re, im]` pairs.
pub fn cmat_to_pairs<T: Real>(m: &CMat<T>) -> Vec<Vec<[T; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn cmat_from_pairs<T: Real>(rows: &[Vec<[T; 2]>]) -> Result<CMat<T>, IoError> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(IoError::Format("ragged complex matrix".into()));
    }
    Ok(CMat::from_fn(nr, nc, |i, j| {
        C::new(rows[i][j][0], rows[i][j][1])
    }))
}

pub fn cvec_to_pairs<T: Real>(v: &CVec<T>) -> Vec<[T; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

pub fn cvec_from_pairs<T: Real>(pairs: &[[T; 2]]) -> CVec<T> {
    CVec::from_fn(pairs.len(), |i, _| C::new(pairs[i][0], pairs[i][1]))
}

#[derive(Serialize, Deserialize)]
struct ImpairmentsDoc<T: Real> {
    schema: String,
    c_t: Vec<Vec<[T; 2]>>,
    c_r: Vec<Vec<[T; 2]>>,
    gamma_t: Vec<[T; 2]>,
    gamma_r: Vec<[T; 2]>,
    eps_t: Vec<T>,
    eps_r: Vec<T>,
}

const IMPAIRMENTS_SCHEMA: &str = "impairments-v1";

/// Serialize an impairment set so the same hardware draw can be reused
/// across experiments.
pub fn impairments_to_json<T: Real + serde::Serialize>(imp: &HardwareImpairments<T>) -> Result<String, IoError> {
    let doc = ImpairmentsDoc {
        schema: IMPAIRMENTS_SCHEMA.into(),
        c_t: cmat_to_pairs(&imp.c_t),
        c_r: cmat_to_pairs(&imp.c_r),
        gamma_t: cvec_to_pairs(&imp.gamma_t),
        gamma_r: cvec_to_pairs(&imp.gamma_r),
        eps_t: imp.eps_t.clone(),
        eps_r: imp.eps_r.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn impairments_from_json<T: Real + serde::de::DeserializeOwned>(text: &str) -> Result<HardwareImpairments<T>, IoError> {
    let doc: ImpairmentsDoc<T> = serde_json::from_str(text)?;
    if doc.schema != IMPAIRMENTS_SCHEMA {
        return Err(IoError::Format(format!("unknown schema {}", doc.schema)));
    }
    Ok(HardwareImpairments {
        c_t: cmat_from_pairs(&doc.c_t)?,
        c_r: cmat_from_pairs(&doc.c_r)?,
        gamma_t: cvec_from_pairs(&doc.gamma_t),
        gamma_r: cvec_from_pairs(&doc.gamma_r),
        eps_t: doc.eps_t,
        eps_r: doc.eps_r,
    })
}

#[derive(Serialize, Deserialize)]
struct DictionaryDoc<T: Real> {
    schema: String,
    d_r1: Vec<Vec<[T; 2]>>,
    d_t1: Vec<Vec<[T; 2]>>,
    eps_r: Vec<T>,
    eps_t: Vec<T>,
    aoa_grid: Vec<T>,
    aod_grid: Vec<T>,
    tau_grid: Vec<T>,
}

const DICTIONARY_SCHEMA: &str = "dictionary-v1";

/// Persist a learned or constructed dictionary (complex entries as
/// `[re, im]` pairs, versioned schema tag).
pub fn dictionary_to_json<T: Real + serde::Serialize>(dict: &DictionarySet<T>) -> Result<String, IoError> {
    let doc = DictionaryDoc {
        schema: DICTIONARY_SCHEMA.into(),
        d_r1: cmat_to_pairs(&dict.d_r1),
        d_t1: cmat_to_pairs(&dict.d_t1),
        eps_r: dict.eps_r.iter().cloned().collect(),
        eps_t: dict.eps_t.iter().cloned().collect(),
        aoa_grid: dict.aoa_grid.values().to_vec(),
        aod_grid: dict.aod_grid.values().to_vec(),
        tau_grid: dict.tau_grid.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn dictionary_from_json<T: Real + serde::de::DeserializeOwned>(text: &str) -> Result<DictionarySet<T>, IoError> {
    let doc: DictionaryDoc<T> = serde_json::from_str(text)?;
    if doc.schema != DICTIONARY_SCHEMA {
        return Err(IoError::Format(format!("unknown schema {}", doc.schema)));
    }
    Ok(DictionarySet {
        d_r1: cmat_from_pairs(&doc.d_r1)?,
        d_t1: cmat_from_pairs(&doc.d_t1)?,
        eps_r: crate::RVec::from_vec(doc.eps_r),
        eps_t: crate::RVec::from_vec(doc.eps_t),
        aoa_grid: AngleGrid::from_values(doc.aoa_grid)
            .map_err(|e| IoError::Format(e.to_string()))?,
        aod_grid: AngleGrid::from_values(doc.aod_grid)
            .map_err(|e| IoError::Format(e.to_string()))?,
        tau_grid: doc.tau_grid,
    })
}
