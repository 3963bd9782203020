//! Line-oriented signature store.
//!
//! ```text
//! fapsm-sig v1 b=<b> m=<m>
//! <identity>|<o_1>,...,<o_m>|<e_11>,...,<e_b1>|...|<e_1m>,...,<e_bm>
//! ```
//!
//! Floats are written in shortest round-trip form, so a write/read cycle is
//! exact. Probe stores use identity `-1` for unlabeled samples.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{FapsmError, Result};
use crate::signature::{Gallery, GalleryEntry, Identity, IdentityMap, ProbeSet, Signature};

const SIG_MAGIC: &str = "fapsm-sig v1";
const NAMES_MAGIC: &str = "fapsm-names v1";

/// Parsed contents of a signature store, before it is interpreted as a
/// gallery or a probe set.
#[derive(Clone, Debug, PartialEq)]
pub struct SignatureStore {
    pub feature_dim: usize,
    pub num_patches: usize,
    pub records: Vec<(Identity, Signature)>,
}

impl SignatureStore {
    pub fn into_gallery(self) -> Result<Gallery> {
        Gallery::new(
            self.records
                .into_iter()
                .map(|(identity, signature)| GalleryEntry { identity, signature })
                .collect(),
        )
    }

    /// All-`-1` identities give an unlabeled probe set; mixing labeled and
    /// unlabeled records is rejected.
    pub fn into_probes(self) -> Result<ProbeSet> {
        let unlabeled = self.records.iter().filter(|(id, _)| id.is_none()).count();
        if unlabeled != 0 && unlabeled != self.records.len() {
            return Err(FapsmError::Format(format!(
                "probe store mixes {unlabeled} unlabeled records with labeled ones"
            )));
        }
        let (ids, samples): (Vec<_>, Vec<_>) = self.records.into_iter().unzip();
        let ids = (unlabeled == 0).then_some(ids);
        ProbeSet::new(samples, ids)
    }
}

pub(crate) fn parse_header_fields<'a>(
    line: &'a str,
    magic: &str,
    line_no: usize,
) -> Result<Vec<(&'a str, &'a str)>> {
    let rest = line
        .strip_prefix(magic)
        .ok_or_else(|| FapsmError::Format(format!("expected header starting with \"{magic}\"")))?;
    if !rest.is_empty() && !rest.starts_with(' ') {
        return Err(FapsmError::Format(format!("expected header starting with \"{magic}\"")));
    }
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| FapsmError::parse(line_no, format!("malformed header field \"{kv}\"")))
        })
        .collect()
}

pub(crate) fn header_value<'a>(
    fields: &[(&'a str, &'a str)],
    key: &str,
    line_no: usize,
) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| FapsmError::parse(line_no, format!("header is missing \"{key}\"")))
}

pub(crate) fn parse_num<T: std::str::FromStr>(s: &str, line_no: usize, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| FapsmError::parse(line_no, format!("invalid {what} \"{s}\"")))
}

pub(crate) fn parse_floats(s: &str, line_no: usize) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            let x: f64 = parse_num(v, line_no, "number")?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(FapsmError::parse(line_no, format!("non-finite number \"{v}\"")))
            }
        })
        .collect()
}

pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_store(text: &str) -> Result<SignatureStore> {
    let mut lines = content_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| FapsmError::Format("empty signature store".into()))?;
    let fields = parse_header_fields(header, SIG_MAGIC, hline)?;
    let b: usize = parse_num(header_value(&fields, "b", hline)?, hline, "b")?;
    let m: usize = parse_num(header_value(&fields, "m", hline)?, hline, "m")?;
    if b == 0 || m == 0 {
        return Err(FapsmError::parse(hline, "b and m must be at least 1"));
    }

    let mut records = Vec::new();
    for (line_no, line) in lines {
        let mut parts = line.split('|');
        let id: i64 = parse_num(parts.next().unwrap_or(""), line_no, "identity")?;
        let flags = parts
            .next()
            .ok_or_else(|| FapsmError::parse(line_no, "missing occlusion flags"))?;
        let occlusion = flags
            .split(',')
            .map(|f| match f.trim() {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(FapsmError::parse(line_no, format!("occlusion flag \"{other}\" is not 0 or 1"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        if occlusion.len() != m {
            return Err(FapsmError::parse(
                line_no,
                format!("{} occlusion flags, header says m={m}", occlusion.len()),
            ));
        }
        let mut data = Vec::with_capacity(b.saturating_mul(m).min(1 << 20));
        let mut blocks = 0;
        for block in parts {
            let values = parse_floats(block, line_no)?;
            if values.len() != b {
                return Err(FapsmError::parse(
                    line_no,
                    format!("feature block {} has {} values, header says b={b}", blocks + 1, values.len()),
                ));
            }
            data.extend(values);
            blocks += 1;
        }
        if blocks != m {
            return Err(FapsmError::parse(line_no, format!("{blocks} feature blocks, header says m={m}")));
        }
        let signature = Signature::new(DMatrix::from_vec(b, m, data), occlusion)
            .map_err(|e| FapsmError::parse(line_no, e.to_string()))?;
        records.push((Identity(id), signature));
    }
    Ok(SignatureStore { feature_dim: b, num_patches: m, records })
}

fn write_header(out: &mut String, b: usize, m: usize) {
    let _ = writeln!(out, "{SIG_MAGIC} b={b} m={m}");
}

fn write_record(out: &mut String, id: Identity, sig: &Signature) {
    let _ = write!(out, "{id}|");
    for (j, &visible) in sig.occlusion().iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        out.push(if visible { '1' } else { '0' });
    }
    for j in 0..sig.num_patches() {
        out.push('|');
        for (i, v) in sig.patch(j).iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
    }
    out.push('\n');
}

pub fn format_gallery(gallery: &Gallery) -> String {
    let mut out = String::new();
    write_header(&mut out, gallery.feature_dim(), gallery.num_patches());
    for e in gallery.entries() {
        write_record(&mut out, e.identity, &e.signature);
    }
    out
}

/// Formats a probe set. `dims` supplies `(b, m)` for an empty set.
pub fn format_probes(probes: &ProbeSet, dims: (usize, usize)) -> String {
    let (b, m) = probes.dims().unwrap_or(dims);
    let mut out = String::new();
    write_header(&mut out, b, m);
    for (i, s) in probes.samples().iter().enumerate() {
        let id = probes.identities().map_or(Identity::NONE, |ids| ids[i]);
        write_record(&mut out, id, s);
    }
    out
}

pub fn parse_identity_map(text: &str) -> Result<IdentityMap> {
    let mut lines = content_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| FapsmError::Format("empty identity map".into()))?;
    parse_header_fields(header, NAMES_MAGIC, hline)?;
    let mut map = IdentityMap::new();
    for (line_no, line) in lines {
        let (id, name) = line
            .split_once('|')
            .ok_or_else(|| FapsmError::parse(line_no, "expected \"<identity>|<name>\""))?;
        let id: i64 = parse_num(id, line_no, "identity")?;
        if map.get(name).is_some() {
            return Err(FapsmError::parse(line_no, format!("duplicate name \"{name}\"")));
        }
        let assigned = map.intern(name);
        if assigned.0 != id {
            return Err(FapsmError::parse(
                line_no,
                format!("identity {id} out of sequence, expected {assigned}"),
            ));
        }
    }
    Ok(map)
}

pub fn format_identity_map(map: &IdentityMap) -> String {
    let mut out = format!("{NAMES_MAGIC}\n");
    for (id, name) in map.iter() {
        let _ = writeln!(out, "{id}|{name}");
    }
    out
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| FapsmError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| FapsmError::io(path, e))
}

pub fn read_gallery(path: &Path) -> Result<Gallery> {
    parse_store(&read_text(path)?)?.into_gallery()
}

pub fn read_probes(path: &Path) -> Result<ProbeSet> {
    parse_store(&read_text(path)?)?.into_probes()
}

pub fn write_gallery(path: &Path, gallery: &Gallery) -> Result<()> {
    write_text(path, &format_gallery(gallery))
}

pub fn write_probes(path: &Path, probes: &ProbeSet, dims: (usize, usize)) -> Result<()> {
    write_text(path, &format_probes(probes, dims))
}
