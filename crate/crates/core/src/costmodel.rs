//! Abstract hardware cost of three per-lane multiplier architectures for a
//! J-bit activation and a 1-bit weight.
//!
//! Each architecture is an inventory of primitives (two-input logic gates,
//! one-bit 2:1 muxes and full-adder bits) as a function of J. Totals are in
//! gate equivalents under configurable primitive weights. Accumulator
//! registers, weight storage and activation memory are excluded; they are
//! common to all three designs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{count_macs, ValidatedGraph, ValueType};
use crate::tensor::MAX_BITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchModel {
    /// J AND/XNOR gates, one mode-select mux, and J full-adder bits of the
    /// weighted popcount tree.
    Proposed,
    /// J-bit 2:1 mux choosing a or −a, 2J gates of negation logic, and a
    /// J-bit adder with carry-in.
    Selector,
    /// J XNOR gates, J gates of correction logic, and two adder stages.
    XnorModified,
}

pub const ALL_ARCHS: [ArchModel; 3] = [ArchModel::Proposed, ArchModel::Selector, ArchModel::XnorModified];

/// Primitive counts for one lane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Primitives {
    pub two_input_logic: u64,
    pub one_bit_mux: u64,
    pub full_adder_bit: u64,
}

impl ArchModel {
    pub fn name(self) -> &'static str {
        match self {
            ArchModel::Proposed => "proposed",
            ArchModel::Selector => "selector",
            ArchModel::XnorModified => "xnor_modified",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ALL_ARCHS
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{name}`")))
    }

    pub fn primitives(self, bits: u8) -> Primitives {
        let j = u64::from(bits);
        match self {
            ArchModel::Proposed => Primitives {
                two_input_logic: j,
                one_bit_mux: 1,
                full_adder_bit: j,
            },
            ArchModel::Selector => Primitives {
                two_input_logic: 3 * j,
                one_bit_mux: j,
                full_adder_bit: j + 1,
            },
            ArchModel::XnorModified => Primitives {
                two_input_logic: 2 * j,
                one_bit_mux: 0,
                full_adder_bit: 2 * j + 1,
            },
        }
    }
}

/// Gate-equivalent weight of each primitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeConfig {
    #[serde(default = "one")]
    pub logic: f64,
    #[serde(default = "two")]
    pub mux: f64,
    #[serde(default = "six")]
    pub full_adder: f64,
    /// Architectures to report, by name; empty means all.
    #[serde(default)]
    pub archs: Vec<String>,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn six() -> f64 {
    6.0
}

impl Default for GeConfig {
    fn default() -> Self {
        GeConfig {
            logic: 1.0,
            mux: 2.0,
            full_adder: 6.0,
            archs: Vec::new(),
        }
    }
}

impl GeConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: GeConfig = serde_json::from_str(text)?;
        for (name, w) in [("logic", cfg.logic), ("mux", cfg.mux), ("full_adder", cfg.full_adder)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("GE weight `{name}` must be a nonnegative number, got {w}")));
            }
        }
        cfg.selected()?;
        Ok(cfg)
    }

    /// Architectures named in the config, in canonical order.
    pub fn selected(&self) -> Result<Vec<ArchModel>> {
        if self.archs.is_empty() {
            return Ok(ALL_ARCHS.to_vec());
        }
        let mut out = self.archs.iter().map(|n| ArchModel::from_name(n)).collect::<Result<Vec<_>>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn weigh(&self, p: Primitives) -> f64 {
        p.two_input_logic as f64 * self.logic + p.one_bit_mux as f64 * self.mux + p.full_adder_bit as f64 * self.full_adder
    }
}

/// Cost of `lanes` parallel lanes of one architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub arch: ArchModel,
    pub bits: u8,
    pub lanes: u64,
    pub per_lane: Primitives,
    pub ge_per_lane: f64,
    pub total_ge: f64,
}

fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::InvalidInput(format!("bit width {bits} outside 1..={MAX_BITS}")));
    }
    Ok(())
}

pub fn model_cost(arch: ArchModel, bits: u8, lanes: u64, ge: &GeConfig) -> Result<CostEntry> {
    check_bits(bits)?;
    if lanes == 0 {
        return Err(Error::InvalidInput("lane count must be at least 1".into()));
    }
    let per_lane = arch.primitives(bits);
    let ge_per_lane = ge.weigh(per_lane);
    Ok(CostEntry {
        arch,
        bits,
        lanes,
        per_lane,
        ge_per_lane,
        total_ge: ge_per_lane * lanes as f64,
    })
}

/// One row of a bit-width sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bits: u8,
    pub totals: BTreeMap<String, f64>,
    /// proposed / arch for each reported architecture.
    pub ratio_vs_proposed: BTreeMap<String, f64>,
}

/// Published synthesized gate counts at J = 8, for context only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublishedReference {
    pub proposed: u64,
    pub selector: u64,
    pub xnor_modified: u64,
    pub proposed_vs_xnor_modified: f64,
    pub proposed_vs_selector: f64,
    pub modeled_vs_xnor_modified: Option<f64>,
    pub modeled_vs_selector: Option<f64>,
    pub note: String,
}

/// Primitive operations a layer executes, weighted by GE, per architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub id: String,
    pub kind: String,
    pub bits: u8,
    pub macs: u64,
    pub ge_ops: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub config: GeConfig,
    pub lanes: u64,
    pub archs: Vec<ArchModel>,
    pub rows: Vec<SweepRow>,
    pub reference: PublishedReference,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub layers: Vec<LayerCost>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub total_macs: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gmacs: Option<f64>,
}

/// Sweeps `bits` for `lanes` lanes and, given a graph, breaks its MACs down per layer.
pub fn compare(lanes: u64, bits: &[u8], ge: &GeConfig, graph: Option<&ValidatedGraph>) -> Result<CostReport> {
    let archs = ge.selected()?;
    let mut rows = Vec::with_capacity(bits.len());
    for &j in bits {
        let mut totals = BTreeMap::new();
        for &a in &archs {
            totals.insert(a.name().to_string(), model_cost(a, j, lanes, ge)?.total_ge);
        }
        let proposed = model_cost(ArchModel::Proposed, j, lanes, ge)?.total_ge;
        let ratio_vs_proposed = totals
            .iter()
            .map(|(k, &v)| (k.clone(), if v == 0.0 { f64::NAN } else { proposed / v }))
            .collect();
        rows.push(SweepRow {
            bits: j,
            totals,
            ratio_vs_proposed,
        });
    }

    let at8 = |a| model_cost(a, 8, 1, ge).map(|c| c.total_ge);
    let p8 = at8(ArchModel::Proposed)?;
    let reference = PublishedReference {
        proposed: 211_000,
        selector: 356_000,
        xnor_modified: 404_000,
        proposed_vs_xnor_modified: 211.0 / 404.0,
        proposed_vs_selector: 211.0 / 356.0,
        modeled_vs_xnor_modified: Some(p8 / at8(ArchModel::XnorModified)?),
        modeled_vs_selector: Some(p8 / at8(ArchModel::Selector)?),
        note: "published figures are synthesized gate counts for a full A8W1 engine; shown for context, not reproduced".into(),
    };

    let (mut layers, mut total_macs, mut gmacs) = (Vec::new(), None, None);
    if let Some(g) = graph {
        let report = count_macs(g);
        for l in &report.layers {
            let i = g.graph().nodes.iter().position(|n| n.id == l.id).expect("layer from graph");
            let bits = match g.value_type(&g.sources(i)[0]) {
                Some(ValueType::Quant { bits, .. }) => *bits,
                _ => 8,
            };
            let ge_ops = archs
                .iter()
                .map(|&a| (a.name().to_string(), ge.weigh(a.primitives(bits)) * l.macs as f64))
                .collect();
            layers.push(LayerCost {
                id: l.id.clone(),
                kind: l.kind.clone(),
                bits,
                macs: l.macs,
                ge_ops,
            });
        }
        total_macs = Some(report.total);
        gmacs = Some(report.gmacs());
    }

    Ok(CostReport {
        config: ge.clone(),
        lanes,
        archs,
        rows,
        reference,
        layers,
        total_macs,
        gmacs,
    })
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "GE weights: logic={} mux={} full_adder={}  lanes={}",
            c.logic, c.mux, c.full_adder, self.lanes
        );
        let _ = write!(s, "{:>4}", "J");
        for a in &self.archs {
            let _ = write!(s, " {:>16}", a.name());
        }
        for a in self.archs.iter().filter(|a| **a != ArchModel::Proposed) {
            let _ = write!(s, " {:>20}", format!("proposed/{}", a.name()));
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "{:>4}", row.bits);
            for a in &self.archs {
                let _ = write!(s, " {:>16.1}", row.totals[a.name()]);
            }
            for a in self.archs.iter().filter(|a| **a != ArchModel::Proposed) {
                let _ = write!(s, " {:>20.3}", row.ratio_vs_proposed[a.name()]);
            }
            s.push('\n');
        }
        let r = &self.reference;
        let _ = writeln!(
            s,
            "published (J=8, synthesized, context only): proposed {}K, selector {}K, xnor_modified {}K; proposed/xnor_modified {:.0}%, proposed/selector {:.0}%",
            r.proposed / 1000,
            r.selector / 1000,
            r.xnor_modified / 1000,
            100.0 * r.proposed_vs_xnor_modified,
            100.0 * r.proposed_vs_selector
        );
        if let (Some(x), Some(y)) = (r.modeled_vs_xnor_modified, r.modeled_vs_selector) {
            let _ = writeln!(
                s,
                "model (J=8): proposed/xnor_modified {:.0}%, proposed/selector {:.0}%",
                100.0 * x,
                100.0 * y
            );
        }
        if !self.layers.is_empty() {
            let _ = write!(s, "\n{:<16} {:<16} {:>3} {:>12}", "layer", "kind", "J", "macs");
            for a in &self.archs {
                let _ = write!(s, " {:>16}", format!("{} GE-ops", a.name()));
            }
            s.push('\n');
            for l in &self.layers {
                let _ = write!(s, "{:<16} {:<16} {:>3} {:>12}", l.id, l.kind, l.bits, l.macs);
                for a in &self.archs {
                    let _ = write!(s, " {:>16.0}", l.ge_ops[a.name()]);
                }
                s.push('\n');
            }
        }
        if let (Some(m), Some(g)) = (self.total_macs, self.gmacs) {
            let _ = writeln!(s, "total MACs: {m} ({g:.6} GMACs)");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_ordering_at_eight_bits() {
        let ge = GeConfig::default();
        let cost = |a| model_cost(a, 8, 1, &ge).unwrap().total_ge;
        assert_eq!(cost(ArchModel::Proposed), 58.0);
        assert_eq!(cost(ArchModel::Selector), 94.0);
        assert_eq!(cost(ArchModel::XnorModified), 118.0);
    }

    #[test]
    fn sweep_shape_and_echo() {
        let bits: Vec<u8> = (1..=16).collect();
        let ge = GeConfig::default();
        let r = compare(1, &bits, &ge, None).unwrap();
        assert_eq!(r.rows.len(), 16);
        assert_eq!(r.config, ge);
        assert!(r.to_text().contains("52%"));
        let back: CostReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back.rows.len(), 16);
    }

    #[test]
    fn unknown_arch_rejected() {
        assert!(GeConfig::from_json(r#"{"archs": ["proposed", "booth"]}"#).is_err());
        assert!(GeConfig::from_json(r#"{"lgoic": 1}"#).is_err());
        let cfg = GeConfig::from_json(r#"{"mux": 3, "archs": ["selector"]}"#).unwrap();
        assert_eq!(cfg.selected().unwrap(), vec![ArchModel::Selector]);
        assert_eq!(cfg.full_adder, 6.0);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let ge = GeConfig::default();
        assert!(model_cost(ArchModel::Proposed, 0, 1, &ge).is_err());
        assert!(model_cost(ArchModel::Proposed, 8, 0, &ge).is_err());
    }

    proptest! {
        #[test]
        fn linear_in_lanes(bits in 1u8..=16, lanes in 1u64..10_000) {
            let ge = GeConfig::default();
            for a in ALL_ARCHS {
                let one = model_cost(a, bits, 1, &ge).unwrap().total_ge;
                prop_assert_eq!(model_cost(a, bits, lanes, &ge).unwrap().total_ge, one * lanes as f64);
            }
        }

        #[test]
        fn monotone_in_bits(bits in 1u8..16, logic in 0.1f64..10.0, mux in 0.1f64..10.0, fa in 0.1f64..10.0) {
            let ge = GeConfig { logic, mux, full_adder: fa, archs: vec![] };
            for a in ALL_ARCHS {
                let lo = model_cost(a, bits, 1, &ge).unwrap().total_ge;
                let hi = model_cost(a, bits + 1, 1, &ge).unwrap().total_ge;
                prop_assert!(hi > lo);
            }
        }

        #[test]
        fn uniform_weights_follow_primitive_counts(bits in 1u8..=16, w in 0.1f64..10.0) {
            let ge = GeConfig { logic: w, mux: w, full_adder: w, archs: vec![] };
            let count = |p: Primitives| p.two_input_logic + p.one_bit_mux + p.full_adder_bit;
            for a in ALL_ARCHS {
                for b in ALL_ARCHS {
                    let (ca, cb) = (count(a.primitives(bits)), count(b.primitives(bits)));
                    let (ga, gb) = (model_cost(a, bits, 1, &ge).unwrap().total_ge, model_cost(b, bits, 1, &ge).unwrap().total_ge);
                    prop_assert_eq!(ca.cmp(&cb), ga.partial_cmp(&gb).unwrap());
                }
            }
        }
    }
}
