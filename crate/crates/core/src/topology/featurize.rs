//! Nine-channel persistence-image features per grid.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{phase_mask, PhaseGrid, PhaseLabel};
use crate::topology::complex::build_complex;
use crate::topology::filtration::signed_distance_filtration;
use crate::topology::image::{persistence_image, ChannelRange, PiParams};
use crate::topology::persistence::{compute_persistence, PersistenceDiagram, PersistencePair};

pub const CHANNELS: usize = 9;

/// Channel index of (phase, k): phases in [`PhaseLabel::ALL`] order, three
/// degrees each.
pub fn channel_index(phase: PhaseLabel, k: usize) -> usize {
    let pos = PhaseLabel::ALL.iter().position(|p| *p == phase).expect("known phase");
    pos * 3 + k
}

pub fn channel_of(index: usize) -> (PhaseLabel, usize) {
    (PhaseLabel::ALL[index / 3], index % 3)
}

/// Diagrams of one grid in µm, indexed by [`channel_index`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseDiagrams {
    pub channels: Vec<PersistenceDiagram>,
}

impl PhaseDiagrams {
    pub fn get(&self, phase: PhaseLabel, k: usize) -> &PersistenceDiagram {
        &self.channels[channel_index(phase, k)]
    }
}

/// Diagrams of one phase in voxel units.
pub fn phase_persistence(g: &PhaseGrid, phase: PhaseLabel) -> [PersistenceDiagram; 3] {
    let f = signed_distance_filtration(&phase_mask(g, phase));
    compute_persistence(&build_complex(&f))
}

/// All nine diagrams, scaled from voxel units to µm by the voxel pitch.
pub fn phase_diagrams(g: &PhaseGrid) -> PhaseDiagrams {
    let mut channels = Vec::with_capacity(CHANNELS);
    for phase in PhaseLabel::ALL {
        for d in phase_persistence(g, phase) {
            channels.push(d.scaled(g.voxel_size()));
        }
    }
    PhaseDiagrams { channels }
}

/// Per-channel image ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRanges(pub Vec<ChannelRange>);

impl Default for ChannelRanges {
    fn default() -> Self {
        Self(vec![ChannelRange::default(); CHANNELS])
    }
}

impl ChannelRanges {
    /// Fits every channel on the given (training) samples.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a PhaseDiagrams> + Clone, sigma: f64) -> Self {
        Self(
            (0..CHANNELS)
                .map(|c| ChannelRange::fit(samples.clone().into_iter().map(|s| &s.channels[c]), sigma))
                .collect(),
        )
    }
}

/// Nine images of one sample, channel-major then row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl FeatureSet {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.resolution * self.resolution;
        &self.values[c * n..(c + 1) * n]
    }
}

pub fn featurize_diagrams(d: &PhaseDiagrams, params: &PiParams, ranges: &ChannelRanges) -> FeatureSet {
    let n = params.resolution * params.resolution;
    let mut values = Vec::with_capacity(CHANNELS * n);
    for c in 0..CHANNELS {
        values.extend(persistence_image(&d.channels[c], params, &ranges.0[c]).values);
    }
    FeatureSet { resolution: params.resolution, values }
}

/// Mask, filtration, complex, diagram and image for all nine channels.
pub fn featurize(g: &PhaseGrid, params: &PiParams, ranges: &ChannelRanges) -> FeatureSet {
    featurize_diagrams(&phase_diagrams(g), params, ranges)
}

/// Header of a feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub sample_id: String,
    pub params: PiParams,
    pub ranges: ChannelRanges,
    /// Name of the filtration function.
    pub filtration: String,
    pub config_hash: String,
}

const FEATURE_MAGIC: &[u8; 4] = b"MSPI";
const FEATURE_VERSION: u32 = 1;

/// Magic, version, header length, JSON header, then the values as
/// little-endian f64.
pub fn write_features<W: Write>(header: &FeatureHeader, f: &FeatureSet, mut w: W) -> Result<()> {
    if f.values.len() != CHANNELS * f.resolution * f.resolution || f.resolution != header.params.resolution {
        return Err(Error::InvalidArgument("feature set does not match its header".into()));
    }
    let json = serde_json::to_vec(header)?;
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for v in &f.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<(FeatureHeader, FeatureSet)> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)?;
    if &head[0..4] != FEATURE_MAGIC {
        return Err(Error::Format("not a feature file".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let len = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: FeatureHeader = serde_json::from_slice(&json)?;
    let res = header.params.resolution;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != CHANNELS * res * res * 8 {
        return Err(Error::Format(format!(
            "expected {} feature bytes, found {}",
            CHANNELS * res * res * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    Ok((header, FeatureSet { resolution: res, values }))
}

pub const DIAGRAM_CSV_HEADER: &str = "sample_id,phase,k,birth,death";

/// One row per finite pair.
pub fn write_diagram_csv<W: Write>(rows: &[(String, PhaseDiagrams)], mut w: W) -> Result<()> {
    writeln!(w, "{DIAGRAM_CSV_HEADER}")?;
    for (id, d) in rows {
        for (c, diagram) in d.channels.iter().enumerate() {
            let (phase, k) = channel_of(c);
            for p in &diagram.pairs {
                writeln!(w, "{id},{phase},{k},{},{}", p.birth, p.death)?;
            }
        }
    }
    Ok(())
}

/// Inverse of [`write_diagram_csv`]; `ids` lists every sample, including
/// those without any pairs, in output order.
pub fn read_diagram_csv<R: std::io::BufRead>(r: R, ids: &[String]) -> Result<Vec<PhaseDiagrams>> {
    let mut index = std::collections::HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        index.insert(id.as_str(), i);
    }
    let mut pairs: Vec<Vec<Vec<PersistencePair>>> = vec![vec![Vec::new(); CHANNELS]; ids.len()];
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty diagram table".into()))??;
    if header.trim_end() != DIAGRAM_CSV_HEADER {
        return Err(Error::Format(format!("unexpected diagram header {header:?}")));
    }
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("diagram row {}: {what}", n + 2));
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let &s = index.get(f[0]).ok_or_else(|| bad("unknown sample"))?;
        let phase = PhaseLabel::parse(f[1]).ok_or_else(|| bad("unknown phase"))?;
        let k: usize = f[2].parse().map_err(|_| bad("bad degree"))?;
        if k > 2 {
            return Err(bad("degree out of range"));
        }
        let birth: f64 = f[3].parse().map_err(|_| bad("bad birth"))?;
        let death: f64 = f[4].parse().map_err(|_| bad("bad death"))?;
        pairs[s][channel_index(phase, k)].push(PersistencePair { birth, death });
    }
    Ok(pairs
        .into_iter()
        .map(|chs| PhaseDiagrams {
            channels: chs
                .into_iter()
                .enumerate()
                .map(|(c, p)| PersistenceDiagram::new((c % 3) as u8, p))
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{new_grid, Dims};

    #[test]
    fn uniform_grid_has_zero_images() {
        let g = new_grid(6, 6, 6, 0.1, PhaseLabel::Ysz).unwrap();
        let f = featurize(&g, &PiParams::default(), &ChannelRanges::default());
        assert_eq!(f.values.len(), 9 * 32 * 32);
        assert!(f.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn channel_layout() {
        for c in 0..CHANNELS {
            let (p, k) = channel_of(c);
            assert_eq!(channel_index(p, k), c);
        }
        assert_eq!(channel_of(0), (PhaseLabel::Ni, 0));
        assert_eq!(channel_of(8), (PhaseLabel::Pore, 2));
    }

    fn sample() -> PhaseGrid {
        PhaseGrid::from_fn(Dims::new(7, 6, 5), 0.05, |x, y, z| match (x * 3 + y * 5 + z * 7) % 6 {
            0 | 1 => PhaseLabel::Ni,
            2 => PhaseLabel::Ysz,
            _ => PhaseLabel::Pore,
        })
        .unwrap()
    }

    #[test]
    fn feature_file_roundtrip() {
        let g = sample();
        let d = phase_diagrams(&g);
        let params = PiParams { resolution: 8, ..Default::default() };
        let ranges = ChannelRanges::fit([&d], params.sigma);
        let f = featurize_diagrams(&d, &params, &ranges);
        let header = FeatureHeader {
            sample_id: "s7".into(),
            params,
            ranges,
            filtration: "signed_edt".into(),
            config_hash: "abc".into(),
        };
        let mut buf = Vec::new();
        write_features(&header, &f, &mut buf).unwrap();
        let (h2, f2) = read_features(&buf[..]).unwrap();
        assert_eq!(h2, header);
        assert_eq!(f2, f);
        assert!(read_features(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_features(&bad[..]).is_err());
    }

    #[test]
    fn diagram_csv_roundtrip() {
        let g = sample();
        let rows = vec![("a".to_string(), phase_diagrams(&g)), ("b".to_string(), PhaseDiagrams {
            channels: (0..9).map(|c| PersistenceDiagram::new((c % 3) as u8, vec![])).collect(),
        })];
        let mut buf = Vec::new();
        write_diagram_csv(&rows, &mut buf).unwrap();
        let ids: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
        let back = read_diagram_csv(&buf[..], &ids).unwrap();
        assert_eq!(back[0], rows[0].1);
        assert_eq!(back[1], rows[1].1);
    }
}
