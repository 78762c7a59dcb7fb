use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::combine::{combine, combine_in_graph, Denominator};
use super::config::GateConfig;
use super::dispatch::{hard_plan, route, RoutingPlan};
use super::experts::{ExpertStack, ExpertVars};
use super::gate::{gate_forward, GateParams, GateScores, GateVars};
use super::noise::gumbel_noise;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{push_linear, Parameterized};
use crate::text::Aspect;

/// Fixed aspect-to-expert assignment of the hard-gate baseline, in aspect
/// declaration order.
pub fn hard_gate_route(aspect: Aspect) -> usize {
    aspect.index()
}

/// [`hard_gate_route`] for an aspect given by name.
pub fn hard_gate_route_name(name: &str) -> Result<usize> {
    name.parse::<Aspect>()
        .map(hard_gate_route)
        .map_err(|_| Error::Usage(format!("unknown aspect {name:?}")))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    #[default]
    Dynamic,
    HardGate,
}

/// Gate plus experts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoeLayer {
    pub config: GateConfig,
    pub gate: GateParams,
    pub experts: ExpertStack,
}

#[derive(Clone, Debug)]
pub struct MoeVars {
    pub gate: GateVars,
    pub experts: Vec<ExpertVars>,
}

/// How a forward pass routes.
pub enum RouteInput<'a> {
    /// Gate on the given input; noise is drawn from `noise` when present
    /// and the configured scale is positive.
    Dynamic {
        gate_x: Var,
        noise: Option<&'a mut dyn RngCore>,
    },
    /// Token `i` goes to `experts[i]` only.
    Hard { experts: &'a [usize] },
}

/// Pieces needed to reproduce a forward pass exactly, e.g. for gradient
/// checks with the plan and denominators held fixed.
#[derive(Clone, Copy, Default)]
pub struct Frozen<'a> {
    pub plan: Option<&'a RoutingPlan>,
    pub denominators: Option<&'a [Denominator]>,
    pub noise: Option<&'a Tensor>,
}

pub struct MoeForward {
    /// Combined expert logits, `B x 3`.
    pub output: Var,
    /// Gate logits after noise (absent under the hard gate).
    pub logits: Option<Var>,
    /// Row softmax of `logits`.
    pub probs: Option<Var>,
    pub plan: RoutingPlan,
    pub denominators: Vec<Denominator>,
    pub noise: Option<Tensor>,
}

impl MoeForward {
    pub fn scores(&self, g: &Graph) -> Option<GateScores> {
        Some(GateScores {
            logits: g.value(self.logits?).clone(),
            probs: g.value(self.probs?).clone(),
        })
    }
}

impl MoeLayer {
    pub fn init<R: Rng + ?Sized>(
        config: GateConfig,
        gate_dim: usize,
        expert_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let gate = GateParams::init(gate_dim, config.n_experts, rng);
        let experts = ExpertStack::init(config.n_experts, expert_dim, hidden, rng);
        Ok(Self { config, gate, experts })
    }

    pub fn bind(&self, g: &mut Graph, order: &mut Vec<Var>) -> MoeVars {
        MoeVars {
            gate: self.gate.bind(g, order),
            experts: self.experts.bind(g, order),
        }
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> MoeVars {
        MoeVars {
            gate: self.gate.bind_frozen(g),
            experts: self.experts.bind_frozen(g),
        }
    }

    /// Gate, route, run the routed experts sparsely and combine.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &MoeVars,
        expert_x: Var,
        route_input: RouteInput<'_>,
        frozen: Frozen<'_>,
    ) -> Result<MoeForward> {
        let b = g.value(expert_x).rows();
        let config = self.config.for_batch(b);
        let (plan, logits, probs, noise) = match route_input {
            RouteInput::Hard { experts } => {
                if experts.len() != b {
                    return Err(Error::dim("hard_gate", (experts.len(), 1), (b, 1)));
                }
                let plan = match frozen.plan {
                    Some(p) => p.clone(),
                    None => hard_plan(experts, self.config.n_experts)?,
                };
                (plan, None, None, None)
            }
            RouteInput::Dynamic { gate_x, noise } => {
                if g.value(gate_x).rows() != b {
                    return Err(Error::dim("gate input", g.value(gate_x).shape(), g.value(expert_x).shape()));
                }
                let clean = vars.gate.forward(g, gate_x)?;
                let noise_t = match (frozen.noise, noise) {
                    (Some(n), _) => Some(n.clone()),
                    (None, Some(rng)) if self.config.noise_scale > 0.0 => {
                        Some(gumbel_noise(b, self.config.n_experts, self.config.noise_scale, rng))
                    }
                    _ => None,
                };
                let logits = match &noise_t {
                    Some(n) => {
                        let nv = g.constant(n.clone());
                        g.add(clean, nv)?
                    }
                    None => clean,
                };
                let probs = g.softmax_rows(logits);
                let plan = match frozen.plan {
                    Some(p) => p.clone(),
                    None => {
                        let scores = GateScores {
                            logits: g.value(logits).clone(),
                            probs: g.value(probs).clone(),
                        };
                        route(&scores, &config)?
                    }
                };
                (plan, Some(logits), Some(probs), noise_t)
            }
        };

        let mut outputs = Vec::new();
        for (e, ev) in vars.experts.iter().enumerate() {
            let tokens = plan.tokens_for(e);
            if tokens.is_empty() {
                continue;
            }
            let xe = g.gather_rows(expert_x, &tokens)?;
            outputs.push((e, ev.forward(g, xe)?));
        }
        let combine_logits = match logits {
            Some(l) => l,
            // Equal scores make the hard-gate combine the single expert output.
            None => g.constant(Tensor::zeros(b, self.config.n_experts)),
        };
        let (output, denominators) = combine_in_graph(g, &plan, combine_logits, &outputs, frozen.denominators)?;
        Ok(MoeForward {
            output,
            logits,
            probs,
            plan,
            denominators,
            noise,
        })
    }
}

/// Result of a plain (unrecorded) forward pass.
#[derive(Clone, Debug)]
pub struct Inference {
    pub output: Tensor,
    pub scores: Option<GateScores>,
    pub plan: RoutingPlan,
}

impl MoeLayer {
    /// Noiseless forward pass without a graph. `hard` selects the hard gate
    /// with the given experts; otherwise `gate_x` feeds the gate.
    pub fn infer(&self, expert_x: &Tensor, gate_x: Option<&Tensor>, hard: Option<&[usize]>) -> Result<Inference> {
        let b = expert_x.rows();
        let (plan, scores) = match (hard, gate_x) {
            (Some(experts), _) => (hard_plan(experts, self.config.n_experts)?, None),
            (None, Some(gx)) => {
                let scores = gate_forward(gx, &self.gate)?;
                (route(&scores, &self.config.for_batch(b))?, Some(scores))
            }
            (None, None) => return Err(Error::Usage("dynamic routing needs a gate input".into())),
        };
        let outputs = self.experts.forward_sparse(expert_x, &plan)?;
        let logits = scores
            .as_ref()
            .map_or_else(|| Tensor::zeros(b, self.config.n_experts), |s| s.logits.clone());
        let output = combine(&plan, &logits, &outputs)?;
        Ok(Inference { output, scores, plan })
    }
}

impl Parameterized for MoeLayer {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        push_linear(&mut v, "gate.hidden", &self.gate.hidden);
        push_linear(&mut v, "gate.out", &self.gate.out);
        for (e, ex) in self.experts.experts.iter().enumerate() {
            push_linear(&mut v, &format!("expert{e}.input"), &ex.input);
            push_linear(&mut v, &format!("expert{e}.output"), &ex.output);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        v.extend(self.gate.hidden.tensors_mut());
        v.extend(self.gate.out.tensors_mut());
        for ex in &mut self.experts.experts {
            v.extend(ex.input.tensors_mut());
            v.extend(ex.output.tensors_mut());
        }
        v
    }
}
