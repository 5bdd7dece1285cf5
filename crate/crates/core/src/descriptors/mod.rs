//! Ground-truth microstructural descriptors.

pub mod edt;
pub mod mesh;
pub mod percolation;
pub mod tortuosity;
pub mod watershed;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use edt::{distance_transform, squared_edt};
pub use mesh::{
    extract_surface, extract_tpb, laplacian_relax, laplacian_smooth, phase_percolation, tpb_length_density,
    Adjacency, SurfaceMesh, TpbNetwork,
};
pub use percolation::{label_components, percolation, PercolationMap, UnionFind};
pub use tortuosity::{tortuosity_factor, Axis, TortuosityResult, TortuositySettings};
pub use watershed::{mean_equivalent_diameter, watershed_grains, LabeledGrid};

use crate::error::{Error, Result};
use crate::grid::{phase_mask, volume_fractions, PhaseGrid, PhaseLabel};

/// The eight regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    DNi,
    DYsz,
    DPore,
    LTpb,
    LTpbActive,
    TauNi,
    TauYsz,
    TauPore,
}

impl Target {
    pub const ALL: [Target; 8] = [
        Target::DNi,
        Target::DYsz,
        Target::DPore,
        Target::LTpb,
        Target::LTpbActive,
        Target::TauNi,
        Target::TauYsz,
        Target::TauPore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::DNi => "d_ni",
            Target::DYsz => "d_ysz",
            Target::DPore => "d_pore",
            Target::LTpb => "l_tpb",
            Target::LTpbActive => "l_tpb_active",
            Target::TauNi => "tau_ni",
            Target::TauYsz => "tau_ysz",
            Target::TauPore => "tau_pore",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Target::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Descriptors of one grid. `None` marks an undefined value (empty phase,
/// or a phase that does not percolate along the transport axis).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DescriptorVector {
    pub d_ni: Option<f64>,
    pub d_ysz: Option<f64>,
    pub d_pore: Option<f64>,
    pub l_tpb: Option<f64>,
    pub l_tpb_active: Option<f64>,
    pub tau_ni: Option<f64>,
    pub tau_ysz: Option<f64>,
    pub tau_pore: Option<f64>,
    pub vf_ni: Option<f64>,
    pub vf_ysz: Option<f64>,
    pub vf_pore: Option<f64>,
}

impl DescriptorVector {
    pub fn get(&self, t: Target) -> Option<f64> {
        match t {
            Target::DNi => self.d_ni,
            Target::DYsz => self.d_ysz,
            Target::DPore => self.d_pore,
            Target::LTpb => self.l_tpb,
            Target::LTpbActive => self.l_tpb_active,
            Target::TauNi => self.tau_ni,
            Target::TauYsz => self.tau_ysz,
            Target::TauPore => self.tau_pore,
        }
    }

    fn columns(&self) -> [Option<f64>; 11] {
        [
            self.d_ni,
            self.d_ysz,
            self.d_pore,
            self.l_tpb,
            self.l_tpb_active,
            self.tau_ni,
            self.tau_ysz,
            self.tau_pore,
            self.vf_ni,
            self.vf_ysz,
            self.vf_pore,
        ]
    }

    fn from_columns(c: [Option<f64>; 11]) -> Self {
        Self {
            d_ni: c[0],
            d_ysz: c[1],
            d_pore: c[2],
            l_tpb: c[3],
            l_tpb_active: c[4],
            tau_ni: c[5],
            tau_ysz: c[6],
            tau_pore: c[7],
            vf_ni: c[8],
            vf_ysz: c[9],
            vf_pore: c[10],
        }
    }
}

/// Per-phase values. Grain diameter and tortuosity are `None` where the
/// descriptor is undefined; other failures propagate.
fn phase_descriptors(g: &PhaseGrid, phase: PhaseLabel, settings: &TortuositySettings) -> Result<(Option<f64>, Option<f64>)> {
    let mask = phase_mask(g, phase);
    let grains = watershed_grains(&mask, g.voxel_size());
    let d = undefined_as_none(mean_equivalent_diameter(&grains, g.voxel_size()))?;
    let tau = undefined_as_none(tortuosity_factor(&mask, g.voxel_size(), settings).map(|r| r.tau))?;
    Ok((d, tau))
}

fn undefined_as_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedDescriptor(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// All eight descriptors plus volume fractions, tortuosity along
/// `settings.axis`.
pub fn characterize_with(g: &PhaseGrid, settings: &TortuositySettings) -> Result<DescriptorVector> {
    let (d_ni, tau_ni) = phase_descriptors(g, PhaseLabel::Ni, settings)?;
    let (d_ysz, tau_ysz) = phase_descriptors(g, PhaseLabel::Ysz, settings)?;
    let (d_pore, tau_pore) = phase_descriptors(g, PhaseLabel::Pore, settings)?;
    let (l_tpb, l_tpb_active) = tpb_length_density(g);
    let vf = volume_fractions(g);
    Ok(DescriptorVector {
        d_ni,
        d_ysz,
        d_pore,
        l_tpb: Some(l_tpb),
        l_tpb_active: Some(l_tpb_active),
        tau_ni,
        tau_ysz,
        tau_pore,
        vf_ni: Some(vf.ni),
        vf_ysz: Some(vf.ysz),
        vf_pore: Some(vf.pore),
    })
}

/// [`characterize_with`] using the default solver settings (axis z).
pub fn characterize(g: &PhaseGrid) -> Result<DescriptorVector> {
    characterize_with(g, &TortuositySettings::default())
}

pub const CSV_HEADER: &str =
    "sample_id,d_ni,d_ysz,d_pore,l_tpb,l_tpb_active,tau_ni,tau_ysz,tau_pore,vf_ni,vf_ysz,vf_pore";

/// Writes the descriptor table; undefined values become empty fields.
pub fn write_descriptor_csv<W: Write>(rows: &[(String, DescriptorVector)], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for (id, d) in rows {
        if id.contains([',', '\n', '"']) {
            return Err(Error::InvalidArgument(format!("sample id {id:?} is not CSV-safe")));
        }
        write!(w, "{id}")?;
        for v in d.columns() {
            match v {
                Some(x) => write!(w, ",{x}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_descriptor_csv<R: BufRead>(r: R) -> Result<Vec<(String, DescriptorVector)>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty descriptor table".into()))??;
    if header.trim_end() != CSV_HEADER {
        return Err(Error::Format(format!("unexpected descriptor header {header:?}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 12 {
            return Err(Error::Format(format!("row {}: expected 12 fields, got {}", n + 2, fields.len())));
        }
        let mut cols = [None; 11];
        for (k, f) in fields[1..].iter().enumerate() {
            if !f.is_empty() {
                cols[k] = Some(f.parse::<f64>().map_err(|e| Error::Format(format!("row {}: {e}", n + 2)))?);
            }
        }
        rows.push((fields[0].to_string(), DescriptorVector::from_columns(cols)));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Dims, PhaseLabel::*};

    #[test]
    fn straight_channel_fixture() {
        // Ni channel along z inside YSZ; no pore, so no TPB.
        let g = PhaseGrid::from_fn(Dims::new(6, 6, 10), 0.5, |x, y, _| {
            if (2..4).contains(&x) && (2..4).contains(&y) {
                Ni
            } else {
                Ysz
            }
        })
        .unwrap();
        let d = characterize(&g).unwrap();
        assert!((d.tau_ni.unwrap() - 1.0).abs() < 1e-3);
        assert_eq!(d.l_tpb, Some(0.0));
        assert_eq!(d.l_tpb_active, Some(0.0));
        assert_eq!(d.d_pore, None);
        assert_eq!(d.tau_pore, None);
        assert_eq!(d.vf_pore, Some(0.0));
        assert!((d.tau_ysz.unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn csv_roundtrip_with_missing() {
        let mut d = DescriptorVector { d_ni: Some(0.5), tau_pore: Some(1.25), vf_ni: Some(0.1 + 0.2), ..Default::default() };
        d.l_tpb = Some(3.0e-7);
        let rows = vec![("s0".to_string(), d), ("s1".to_string(), DescriptorVector::default())];
        let mut buf = Vec::new();
        write_descriptor_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert!(text.contains("s1,,,,,,,,,,,"));
        let back = read_descriptor_csv(&buf[..]).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn csv_rejects_bad_input() {
        assert!(read_descriptor_csv(&b"a,b\n"[..]).is_err());
        let bad = format!("{CSV_HEADER}\ns0,1,2\n");
        assert!(read_descriptor_csv(bad.as_bytes()).is_err());
        let rows = vec![("a,b".to_string(), DescriptorVector::default())];
        assert!(write_descriptor_csv(&rows, Vec::new()).is_err());
    }

    #[test]
    fn target_names_roundtrip() {
        for t in Target::ALL {
            assert_eq!(Target::parse(t.name()), Some(t));
        }
        assert_eq!(Target::parse("nope"), None);
    }
}
