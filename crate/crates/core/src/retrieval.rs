//! Bit-packed binary codes, Hamming search and average precision.
//!
//! Bit `b` of a code lives in byte `b / 8` at position `b % 8` (LSB first);
//! a set bit means the component is `+1`. Unused trailing bits are zero, so
//! Hamming distance is a plain popcount of the XOR.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{ByteReader, ModelWorld};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const CODE_MAGIC: &[u8; 4] = b"BCDB";

/// Code lengths swept by the evaluation harness.
pub const SWEEP_CODE_LENGTHS: [usize; 5] = [8, 16, 32, 256, 512];

/// `sgn` with `sgn(0) = +1`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
pub fn bytes_per_code(code_len: usize) -> usize {
    code_len.div_ceil(8)
}

/// N packed L-bit codes with one id per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeDatabase {
    ids: Vec<String>,
    code_len: usize,
    packed: Vec<u8>,
}

impl CodeDatabase {
    pub fn from_packed(ids: Vec<String>, code_len: usize, packed: Vec<u8>) -> Result<Self> {
        let width = bytes_per_code(code_len);
        if packed.len() != ids.len() * width {
            return Err(Error::Shape(format!(
                "{} ids need {} packed bytes, got {}",
                ids.len(),
                ids.len() * width,
                packed.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Contract(format!("duplicate code id `{dup}`")));
        }
        let db = Self {
            ids,
            code_len,
            packed,
        };
        if let Some(row) = (0..db.len()).find(|&r| {
            db.row(r)
                .last()
                .is_some_and(|&b| b & db.trailing_mask() != 0)
        }) {
            return Err(Error::Contract(format!(
                "row {row} has non-zero padding bits"
            )));
        }
        Ok(db)
    }

    /// Packs `{-1,+1}` sign rows (entries must be exactly ±1).
    pub fn from_signs(ids: Vec<String>, signs: &Matrix) -> Result<Self> {
        if signs.data().iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::Contract(
                "sign matrix has entries other than ±1".into(),
            ));
        }
        Ok(binarize(signs, ids))
    }

    fn trailing_mask(&self) -> u8 {
        match self.code_len % 8 {
            0 => 0,
            r => !((1u8 << r) - 1),
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.ids.len() {
            return Err(Error::Shape(format!(
                "{} ids for {} codes",
                ids.len(),
                self.ids.len()
            )));
        }
        let packed = std::mem::take(&mut self.packed);
        Self::from_packed(ids, self.code_len, packed)
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn packed(&self) -> &[u8] {
        &self.packed
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        let w = bytes_per_code(self.code_len);
        &self.packed[i * w..(i + 1) * w]
    }

    /// Component `b` of row `i` as ±1.
    #[inline]
    pub fn bit(&self, i: usize, b: usize) -> f64 {
        if self.row(i)[b / 8] >> (b % 8) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn unpack_row(&self, i: usize) -> Vec<f64> {
        (0..self.code_len).map(|b| self.bit(i, b)).collect()
    }

    /// Dense N×L matrix of ±1 entries.
    pub fn to_signs(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), self.code_len);
        for i in 0..self.len() {
            for b in 0..self.code_len {
                m.set(i, b, self.bit(i, b));
            }
        }
        m
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = u32::try_from(self.len()).map_err(|_| Error::Param("too many codes".into()))?;
        let l = u32::try_from(self.code_len).map_err(|_| Error::Param("code too long".into()))?;
        let mut out = Vec::with_capacity(12 + self.packed.len());
        out.extend_from_slice(CODE_MAGIC);
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&l.to_le_bytes());
        out.extend_from_slice(&self.packed);
        Ok(out)
    }

    /// Decodes a code file. The format carries no ids, so rows are named by
    /// their ordinal (`"0"`, `"1"`, ...); attach real ids with [`with_ids`].
    ///
    /// [`with_ids`]: CodeDatabase::with_ids
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(CODE_MAGIC)?;
        let n = r.u32()? as usize;
        let l = r.u32()? as usize;
        let width = bytes_per_code(l);
        let total = n.checked_mul(width).ok_or_else(|| {
            Error::format(4, format!("dimension overflow: {n} codes of {l} bits"))
        })?;
        let start = r.offset();
        let packed = r.take(total, "code rows")?.to_vec();
        r.finish()?;
        let mask = match l % 8 {
            0 => 0,
            rem => !((1u8 << rem) - 1),
        };
        if width > 0 {
            if let Some(row) = (0..n).find(|&i| packed[(i + 1) * width - 1] & mask != 0) {
                return Err(Error::format(
                    (start + (row + 1) * width - 1) as u64,
                    format!("row {row} has non-zero padding bits"),
                ));
            }
        }
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::from_packed(ids, l, packed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// `sgn` of every entry, packed. `ids` names the rows.
pub fn binarize(f: &Matrix, ids: Vec<String>) -> CodeDatabase {
    assert_eq!(ids.len(), f.rows(), "one id per embedding row");
    let code_len = f.cols();
    let width = bytes_per_code(code_len);
    let mut packed = vec![0u8; f.rows() * width];
    for r in 0..f.rows() {
        let out = &mut packed[r * width..(r + 1) * width];
        for (b, &v) in f.row(r).iter().enumerate() {
            if v >= 0.0 {
                out[b / 8] |= 1 << (b % 8);
            }
        }
    }
    CodeDatabase {
        ids,
        code_len,
        packed,
    }
}

/// Number of differing bits between two packed codes of the same length.
pub fn hamming(a: &[u8], b: &[u8]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "hamming on codes of {} and {} bytes",
            a.len(),
            b.len()
        )));
    }
    Ok(hamming_unchecked(a, b))
}

#[inline]
pub(crate) fn hamming_unchecked(a: &[u8], b: &[u8]) -> u32 {
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    let mut d = 0;
    for (x, y) in (&mut ca).zip(&mut cb) {
        let x = u64::from_le_bytes(x.try_into().unwrap());
        let y = u64::from_le_bytes(y.try_into().unwrap());
        d += (x ^ y).count_ones();
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        d += (x ^ y).count_ones();
    }
    d
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedEntry {
    pub image_id: String,
    pub distance: u32,
}

/// Database ranked by ascending `(distance, image_id)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
    /// `remove_id` was requested but not present in the database.
    pub missing_removal: bool,
}

/// Linear-scan Hamming ranking of the whole database.
pub fn search(
    db: &CodeDatabase,
    query_id: &str,
    query: &[u8],
    remove_id: Option<&str>,
) -> Result<RankedList> {
    if query.len() != bytes_per_code(db.code_len()) {
        return Err(Error::Contract(format!(
            "query has {} bytes, database codes have {}",
            query.len(),
            bytes_per_code(db.code_len())
        )));
    }
    let mut scored: Vec<(u32, usize)> = Vec::with_capacity(db.len());
    let mut removed = false;
    for i in 0..db.len() {
        if remove_id == Some(db.ids[i].as_str()) {
            removed = true;
            continue;
        }
        scored.push((hamming_unchecked(query, db.row(i)), i));
    }
    scored.sort_unstable_by(|a, b| a.0.cmp(&b.0).then_with(|| db.ids[a.1].cmp(&db.ids[b.1])));
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries: scored
            .into_iter()
            .map(|(distance, i)| RankedEntry {
                image_id: db.ids[i].clone(),
                distance,
            })
            .collect(),
        missing_removal: remove_id.is_some() && !removed,
    })
}

/// Writes `query_id,rank,image_id,distance` rows (rank is 1-based).
pub fn export_results(path: impl AsRef<Path>, lists: &[RankedList]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "query_id,rank,image_id,distance")?;
    for list in lists {
        for (rank, e) in list.entries.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                list.query_id,
                rank + 1,
                e.image_id,
                e.distance
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Non-interpolated average precision of a ranked relevance list.
///
/// `num_relevant` is the total number of relevant items in the ground
/// truth, which may exceed the hits present in `flags`.
pub fn average_precision(flags: &[bool], num_relevant: usize) -> Result<f64> {
    if num_relevant == 0 {
        return Err(Error::Protocol(
            "average precision with no relevant items".into(),
        ));
    }
    // Compensated sum of hits/rank: quotient residuals and the summation
    // error are carried separately so the result is correctly rounded in
    // practice, e.g. [1,0,1,0] gives exactly 5/6.
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    let mut low = 0.0f64;
    for (rank, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
        hits += 1;
        let (h, r) = (hits as f64, (rank + 1) as f64);
        let q = h / r;
        low += (-q).mul_add(r, h) / r;
        let t = sum + q;
        low += if sum.abs() >= q.abs() {
            (sum - t) + q
        } else {
            (q - t) + sum
        };
        sum = t;
    }
    let total = sum + low;
    let total_low = (sum - total) + low;
    let n = num_relevant as f64;
    let ap = total / n;
    Ok(ap + ((-ap).mul_add(n, total) + total_low) / n)
}

/// Mean AP over queries that have at least one relevant item; the rest are
/// skipped.
pub fn mean_ap<'a, I>(queries: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [bool], usize)>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for (flags, num_relevant) in queries {
        if num_relevant == 0 {
            continue;
        }
        total += average_precision(flags, num_relevant)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Protocol("no query has a relevant item".into()));
    }
    Ok(total / count as f64)
}

/// Ranks `database` images for every query in `queries` and returns mAP.
///
/// `codes` rows follow world image order. Relevance is "same model and at
/// least `tau` co-observed points"; a query never retrieves itself.
pub fn evaluate_map(
    world: &ModelWorld,
    codes: &CodeDatabase,
    queries: &[usize],
    database: &[usize],
    tau: usize,
) -> Result<f64> {
    if codes.len() != world.num_images() {
        return Err(Error::Shape(format!(
            "{} codes for a world of {} images",
            codes.len(),
            world.num_images()
        )));
    }
    if queries.is_empty() {
        return Err(Error::Protocol("no queries to evaluate".into()));
    }
    let per_query: Vec<(Vec<bool>, usize)> = queries
        .par_iter()
        .map(|&q| {
            let qrow = codes.row(q);
            let mut scored: Vec<(u32, usize)> = database
                .iter()
                .filter(|&&j| j != q)
                .map(|&j| (hamming_unchecked(qrow, codes.row(j)), j))
                .collect();
            scored.sort_unstable();
            let flags: Vec<bool> = scored
                .iter()
                .map(|&(_, j)| world.is_match(q, j, tau))
                .collect();
            let relevant = flags.iter().filter(|&&f| f).count();
            (flags, relevant)
        })
        .collect();
    mean_ap(per_query.iter().map(|(f, n)| (f.as_slice(), *n)))
}
