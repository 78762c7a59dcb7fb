//! Per-token routing trace rows and the statistics recoverable from them.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::dispatch::RoutingPlan;
use super::utilization::{normalize_counts, UtilizationVector};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::text::Aspect;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub token: usize,
    pub aspect: String,
    /// `expert:rank` pairs separated by `;`.
    pub routed: String,
    /// Top-K drops, `K - |R_i|`.
    pub drops: usize,
    /// IR target expert, empty when none.
    pub ir_target: String,
    pub ir_multiplicity: usize,
    /// `expert:rank` fill-in pairs separated by `;`.
    pub fr_fills: String,
    /// Still dropped after rectification.
    pub unrouted: bool,
    /// Gate probabilities separated by `;`; empty under the hard gate.
    pub gate_probs: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoutingTrace {
    pub rows: Vec<TraceRow>,
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl RoutingTrace {
    pub fn record(&mut self, step: usize, plan: &RoutingPlan, aspects: &[Aspect], probs: Option<&Tensor>) {
        for i in 0..plan.n_tokens {
            let ir = plan.ir_reroutes.iter().find(|r| r.token == i);
            self.rows.push(TraceRow {
                step,
                token: i,
                aspect: aspects.get(i).map(|a| a.name().to_string()).unwrap_or_default(),
                routed: join(plan.routed[i].iter().map(|r| format!("{}:{}", r.expert, r.rank))),
                drops: plan.missing(i),
                ir_target: ir.map(|r| r.expert.to_string()).unwrap_or_default(),
                ir_multiplicity: ir.map_or(0, |r| r.multiplicity),
                fr_fills: join(
                    plan.fr_fills
                        .iter()
                        .filter(|f| f.token == i)
                        .map(|f| format!("{}:{}", f.expert, f.rank)),
                ),
                unrouted: plan.dropped.iter().any(|d| d.token == i),
                gate_probs: probs.map(|p| join(p.row_slice(i).iter())).unwrap_or_default(),
            });
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Total dropped Top-K assignments before rectification.
    pub fn total_drops(&self) -> usize {
        self.rows.iter().map(|r| r.drops).sum()
    }

    pub fn unrouted(&self) -> usize {
        self.rows.iter().filter(|r| r.unrouted).count()
    }

    /// Slot counts per expert over all rows.
    pub fn occupancy(&self, n_experts: usize) -> Result<Vec<usize>> {
        let mut counts = vec![0; n_experts];
        let mut bump = |e: &str| -> Result<()> {
            let e: usize = e
                .parse()
                .map_err(|_| Error::Schema(format!("bad expert id {e:?} in trace")))?;
            *counts
                .get_mut(e)
                .ok_or_else(|| Error::Schema(format!("expert {e} out of range in trace")))? += 1;
            Ok(())
        };
        for r in &self.rows {
            for pair in r.routed.split(';').chain(r.fr_fills.split(';')).filter(|s| !s.is_empty()) {
                bump(pair.split(':').next().unwrap_or_default())?;
            }
            if !r.ir_target.is_empty() {
                bump(&r.ir_target)?;
            }
        }
        Ok(counts)
    }

    pub fn hard_utilization(&self, n_experts: usize) -> Result<UtilizationVector> {
        normalize_counts(&self.occupancy(n_experts)?)
    }

    /// Mean gate probability per (expert, aspect) as `E` rows of 6 aspect
    /// columns. Rows without gate probabilities (hard gate) spread unit mass
    /// over their routed experts. Aspects absent from the trace get zero
    /// columns.
    pub fn heatmap(&self, n_experts: usize) -> Result<Vec<Vec<f64>>> {
        let mut sums = vec![vec![0.0; Aspect::COUNT]; n_experts];
        let mut counts = [0usize; Aspect::COUNT];
        for r in &self.rows {
            let a: Aspect = r
                .aspect
                .parse()
                .map_err(|_| Error::Schema(format!("bad aspect {:?} in trace", r.aspect)))?;
            let probs = if r.gate_probs.is_empty() {
                routed_mass(&r.routed, n_experts)?
            } else {
                r.gate_probs
                    .split(';')
                    .map(|p| p.parse::<f64>())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|e| Error::Schema(format!("bad gate probability in trace: {e}")))?
            };
            if probs.len() != n_experts {
                return Err(Error::Schema(format!("{} gate probabilities, want {n_experts}", probs.len())));
            }
            for (row, p) in sums.iter_mut().zip(&probs) {
                row[a.index()] += p;
            }
            counts[a.index()] += 1;
        }
        for row in &mut sums {
            for (v, &c) in row.iter_mut().zip(&counts) {
                if c > 0 {
                    *v /= c as f64;
                }
            }
        }
        Ok(sums)
    }
}

fn routed_mass(routed: &str, n_experts: usize) -> Result<Vec<f64>> {
    let experts: Vec<usize> = routed
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|pair| pair.split(':').next().unwrap_or_default().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Schema(format!("bad routed expert in trace: {e}")))?;
    let mut mass = vec![0.0; n_experts];
    for &e in &experts {
        *mass
            .get_mut(e)
            .ok_or_else(|| Error::Schema(format!("expert {e} out of range in trace")))? += 1.0 / experts.len() as f64;
    }
    Ok(mass)
}
