//! Capacity-limited Top-K dispatch and the two rectification passes.
//!
//! Ordering rules (all deterministic):
//! - a token ranks experts by descending gate probability, ties to the lower
//!   expert index;
//! - an expert admits competing tokens by descending gate probability, ties
//!   to the lower token index;
//! - intra-group rectification visits dropped tokens in token order and picks
//!   the free, not-yet-routed expert with the highest logit (ties to the lower
//!   index);
//! - fill-in rectification fills each expert's padding with the tokens that
//!   rank it `K+1`-th, by descending logit, ties to the lower token index.
//!
//! Tokens are split into `n_groups` contiguous groups; every group has its
//! own slot table per expert and rectification never crosses groups.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::config::{capacity, GateConfig};
use super::gate::GateScores;
use crate::error::{Error, Result};

/// Why a token occupies an expert slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotSource {
    TopK,
    IntraGroup,
    FillIn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotEntry {
    pub token: usize,
    pub source: SlotSource,
}

/// An expert a token reached through Top-K, with its 1-based rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routed {
    pub expert: usize,
    pub rank: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub token: usize,
    /// `K - |R_i|`.
    pub missing: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrReroute {
    pub token: usize,
    pub expert: usize,
    pub multiplicity: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrFill {
    pub token: usize,
    pub expert: usize,
    pub rank: usize,
}

/// One term of a token's combined output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub expert: usize,
    pub multiplicity: f64,
    pub source: SlotSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingPlan {
    pub n_tokens: usize,
    pub n_experts: usize,
    pub top_k: usize,
    pub capacity: usize,
    pub n_groups: usize,
    /// Full expert ranking per token.
    pub ranking: Vec<Vec<usize>>,
    /// `R_i`: experts admitted from the token's Top-K, by rank.
    pub routed: Vec<Vec<Routed>>,
    /// Slot table per `(group, expert)` at index `group * n_experts + expert`.
    /// Entries beyond `len()` up to `capacity` are padding.
    pub slots: Vec<Vec<SlotEntry>>,
    /// Tokens still short of `K` experts (after IR: those IR could not place).
    pub dropped: Vec<Dropped>,
    pub ir_reroutes: Vec<IrReroute>,
    pub fr_fills: Vec<FrFill>,
}

impl RoutingPlan {
    pub fn group_size(&self) -> usize {
        self.n_tokens / self.n_groups
    }

    pub fn group_of(&self, token: usize) -> usize {
        token / self.group_size()
    }

    fn table(&self, group: usize, expert: usize) -> &Vec<SlotEntry> {
        &self.slots[group * self.n_experts + expert]
    }

    fn table_mut(&mut self, group: usize, expert: usize) -> &mut Vec<SlotEntry> {
        &mut self.slots[group * self.n_experts + expert]
    }

    /// Unfilled slots summed over groups, per expert.
    pub fn pad_counts(&self) -> Vec<usize> {
        let mut pads = vec![0; self.n_experts];
        for (idx, t) in self.slots.iter().enumerate() {
            pads[idx % self.n_experts] += self.capacity - t.len();
        }
        pads
    }

    pub fn total_pad(&self) -> usize {
        self.pad_counts().iter().sum()
    }

    /// Occupied slots summed over groups, per expert.
    pub fn occupancy(&self) -> Vec<usize> {
        let mut occ = vec![0; self.n_experts];
        for (idx, t) in self.slots.iter().enumerate() {
            occ[idx % self.n_experts] += t.len();
        }
        occ
    }

    /// Tokens served by `expert`, in slot order (groups ascending).
    pub fn tokens_for(&self, expert: usize) -> Vec<usize> {
        (0..self.n_groups)
            .flat_map(|g| self.table(g, expert).iter().map(|s| s.token))
            .collect()
    }

    /// Terms of token `i`'s combined output: Top-K experts with weight 1, the
    /// IR expert with weight `K - |R_i|`, and any fill-in expert with weight 1.
    pub fn participants(&self, token: usize) -> Vec<Participant> {
        let mut out: Vec<Participant> = self.routed[token]
            .iter()
            .map(|r| Participant {
                expert: r.expert,
                multiplicity: 1.0,
                source: SlotSource::TopK,
            })
            .collect();
        out.extend(self.ir_reroutes.iter().filter(|r| r.token == token).map(|r| Participant {
            expert: r.expert,
            multiplicity: r.multiplicity as f64,
            source: SlotSource::IntraGroup,
        }));
        out.extend(self.fr_fills.iter().filter(|f| f.token == token).map(|f| Participant {
            expert: f.expert,
            multiplicity: 1.0,
            source: SlotSource::FillIn,
        }));
        out
    }

    /// Number of drops recorded by Top-K dispatch for `token`.
    pub fn missing(&self, token: usize) -> usize {
        self.top_k - self.routed[token].len()
    }

    /// Checks the structural invariants: capacity respected, no duplicate
    /// `(token, expert)` pair, tokens only in their own group's tables.
    pub fn check_invariants(&self) -> Result<()> {
        let gs = self.group_size();
        for (idx, t) in self.slots.iter().enumerate() {
            if t.len() > self.capacity {
                return Err(Error::Usage(format!(
                    "expert {} group {} holds {} > capacity {}",
                    idx % self.n_experts,
                    idx / self.n_experts,
                    t.len(),
                    self.capacity
                )));
            }
            let group = idx / self.n_experts;
            let mut seen = std::collections::HashSet::new();
            for s in t {
                if s.token / gs != group {
                    return Err(Error::Usage(format!("token {} outside its group", s.token)));
                }
                if !seen.insert(s.token) {
                    return Err(Error::Usage(format!(
                        "token {} twice in expert {}",
                        s.token,
                        idx % self.n_experts
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Expert order of one score row: descending score, ties to the lower index.
pub fn rank_experts(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| desc(row[a], row[b]).then(a.cmp(&b)));
    order
}

fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Top-K selection and capacity-limited admission.
pub fn topk_dispatch(scores: &GateScores, config: &GateConfig) -> Result<RoutingPlan> {
    config.validate()?;
    let (n_tokens, n_experts) = scores.probs.shape();
    if n_experts != config.n_experts {
        return Err(Error::dim("topk_dispatch", (n_tokens, n_experts), (n_tokens, config.n_experts)));
    }
    let cap = capacity(config, n_tokens)?;
    let gs = config.group_size(n_tokens)?;
    let k = config.top_k;
    let probs = &scores.probs;

    let ranking: Vec<Vec<usize>> = (0..n_tokens).map(|i| rank_experts(probs.row_slice(i))).collect();
    let mut plan = RoutingPlan {
        n_tokens,
        n_experts,
        top_k: k,
        capacity: cap,
        n_groups: config.n_groups,
        ranking,
        routed: vec![Vec::new(); n_tokens],
        slots: vec![Vec::new(); config.n_groups * n_experts],
        dropped: Vec::new(),
        ir_reroutes: Vec::new(),
        fr_fills: Vec::new(),
    };

    for group in 0..config.n_groups {
        let tokens = group * gs..(group + 1) * gs;
        for e in 0..n_experts {
            let mut competing: Vec<(usize, usize)> = tokens
                .clone()
                .filter_map(|i| plan.ranking[i][..k].iter().position(|&x| x == e).map(|r| (i, r + 1)))
                .collect();
            competing.sort_by(|a, b| desc(probs.get(a.0, e), probs.get(b.0, e)).then(a.0.cmp(&b.0)));
            for &(i, rank) in competing.iter().take(cap) {
                plan.routed[i].push(Routed { expert: e, rank });
                plan.table_mut(group, e).push(SlotEntry {
                    token: i,
                    source: SlotSource::TopK,
                });
            }
        }
    }
    for (i, r) in plan.routed.iter_mut().enumerate() {
        r.sort_by_key(|x| x.rank);
        if r.len() < k {
            plan.dropped.push(Dropped {
                token: i,
                missing: k - r.len(),
            });
        }
    }
    Ok(plan)
}

/// Reassigns each dropped token to its highest-logit expert in the same group
/// that still has a free slot and is not already in `R_i`. Tokens that find
/// no such expert stay in `dropped`.
pub fn intra_group_rectify(mut plan: RoutingPlan, scores: &GateScores) -> RoutingPlan {
    let logits = &scores.logits;
    let pending = std::mem::take(&mut plan.dropped);
    for d in pending {
        let group = plan.group_of(d.token);
        let best = (0..plan.n_experts)
            .filter(|&e| plan.table(group, e).len() < plan.capacity)
            .filter(|&e| plan.routed[d.token].iter().all(|r| r.expert != e))
            .fold(None::<usize>, |best, e| match best {
                Some(b) if logits.get(d.token, b) >= logits.get(d.token, e) => Some(b),
                _ => Some(e),
            });
        match best {
            Some(h) => {
                plan.table_mut(group, h).push(SlotEntry {
                    token: d.token,
                    source: SlotSource::IntraGroup,
                });
                plan.ir_reroutes.push(IrReroute {
                    token: d.token,
                    expert: h,
                    multiplicity: d.missing,
                });
            }
            None => plan.dropped.push(d),
        }
    }
    plan
}

/// Fills padding with the tokens whose `(K+1)`-th ranked expert it is,
/// highest logit first. A no-op when `K = E`.
pub fn fill_in_rectify(mut plan: RoutingPlan, scores: &GateScores) -> RoutingPlan {
    let k = plan.top_k;
    if k >= plan.n_experts {
        return plan;
    }
    let logits = &scores.logits;
    let gs = plan.group_size();
    for group in 0..plan.n_groups {
        for e in 0..plan.n_experts {
            let free = plan.capacity - plan.table(group, e).len();
            if free == 0 {
                continue;
            }
            let mut candidates: Vec<usize> = (group * gs..(group + 1) * gs)
                .filter(|&i| plan.ranking[i][k] == e)
                .filter(|&i| plan.table(group, e).iter().all(|s| s.token != i))
                .collect();
            candidates.sort_by(|&a, &b| desc(logits.get(a, e), logits.get(b, e)).then(a.cmp(&b)));
            for &i in candidates.iter().take(free) {
                plan.table_mut(group, e).push(SlotEntry {
                    token: i,
                    source: SlotSource::FillIn,
                });
                plan.fr_fills.push(FrFill {
                    token: i,
                    expert: e,
                    rank: k + 1,
                });
            }
        }
    }
    plan
}

/// Dispatch followed by whichever rectification passes `config` enables.
pub fn route(scores: &GateScores, config: &GateConfig) -> Result<RoutingPlan> {
    let mut plan = topk_dispatch(scores, config)?;
    if config.intra_group_rectification {
        plan = intra_group_rectify(plan, scores);
    }
    if config.fill_in_rectification {
        plan = fill_in_rectify(plan, scores);
    }
    Ok(plan)
}

/// Plan for the fixed aspect-to-expert baseline: token `i` goes to
/// `experts[i]` alone, with no capacity limit.
pub fn hard_plan(experts: &[usize], n_experts: usize) -> Result<RoutingPlan> {
    let n = experts.len();
    if let Some(&bad) = experts.iter().find(|&&e| e >= n_experts) {
        return Err(Error::Usage(format!("expert {bad} out of range for {n_experts} experts")));
    }
    let mut slots = vec![Vec::new(); n_experts];
    for (i, &e) in experts.iter().enumerate() {
        slots[e].push(SlotEntry {
            token: i,
            source: SlotSource::TopK,
        });
    }
    Ok(RoutingPlan {
        n_tokens: n,
        n_experts,
        top_k: 1,
        capacity: n.max(1),
        n_groups: 1,
        ranking: experts
            .iter()
            .map(|&e| std::iter::once(e).chain((0..n_experts).filter(|&x| x != e)).collect())
            .collect(),
        routed: experts.iter().map(|&e| vec![Routed { expert: e, rank: 1 }]).collect(),
        slots,
        dropped: Vec::new(),
        ir_reroutes: Vec::new(),
        fr_fills: Vec::new(),
    })
}
