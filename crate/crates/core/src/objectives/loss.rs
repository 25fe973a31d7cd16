//! Likelihood, coreference alignment and flow losses.

use serde::{Deserialize, Serialize};

use crate::corpus::coref::CorefAnnotation;
use crate::corpus::EvidenceLabel;
use crate::graph::{Graph, Var};
use crate::nnet::{forward, IndexedExample, Mode, Parameters};
use crate::{Error, Result};

/// Per-example (or averaged) loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub coref: f64,
    pub flow: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.nll.is_finite() && self.coref.is_finite() && self.flow.is_finite() && self.total.is_finite()
    }

    pub fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.nll += weight * other.nll;
        self.coref += weight * other.coref;
        self.flow += weight * other.flow;
        self.total += weight * other.total;
    }
}

/// Which loss a gradient is taken of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Nll,
    Coref,
    Flow,
    Joint,
}

/// Mean over timesteps of `-log P(target_t)`, probabilities clamped at
/// `1e-12`.
pub fn nll_loss(g: &mut Graph, distributions: &[Var], targets: &[usize]) -> Result<Var> {
    if distributions.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} distributions for {} targets",
            distributions.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::Empty("target sequence"));
    }
    let logs: Vec<Var> = distributions
        .iter()
        .zip(targets)
        .map(|(&d, &t)| {
            let p = g.pick(d, t);
            g.log(p)
        })
        .collect();
    let total = g.add_n(&logs);
    Ok(g.scale(total, -1.0 / targets.len() as f64))
}

/// Coreference alignment loss at the pronoun's teacher-forced step:
/// `-(λ1 log(Σ β^c / Σ β) + λ2 log p_coref) · s_c`.
///
/// `attention` is the unified attention row of each step, the first
/// `passage_len` columns being passage weights and the rest the flattened
/// history. `targets` are the teacher-forced target ids.
#[allow(clippy::too_many_arguments)]
pub fn coref_loss(
    g: &mut Graph,
    attention: &[Var],
    distributions: &[Var],
    targets: &[usize],
    passage_len: usize,
    coref: &CorefAnnotation,
    lambda1: f64,
    lambda2: f64,
) -> Result<Var> {
    let t = coref.pronoun;
    if t >= attention.len() || t >= distributions.len() || t >= targets.len() {
        return Err(Error::Contract(format!("pronoun position {t} beyond {} decoding steps", attention.len())));
    }
    let (_, width) = g.shape(attention[t]);
    let history_len = width.saturating_sub(passage_len);
    if history_len == 0 {
        return Err(Error::Contract("coreference annotation without conversation history".into()));
    }
    if let Some(&bad) = coref.mention_positions.iter().find(|&&p| p >= history_len) {
        return Err(Error::Contract(format!("mention position {bad} outside history of {history_len} tokens")));
    }
    let beta = g.slice_cols(attention[t], passage_len, history_len);
    let mention = g.select_sum(beta, &coref.mention_positions);
    let all = g.sum(beta);
    let ratio = g.div(mention, all);
    let log_ratio = g.log(ratio);
    let p = g.pick(distributions[t], targets[t]);
    let log_p = g.log(p);
    let a = g.scale(log_ratio, lambda1);
    let b = g.scale(log_p, lambda2);
    let sum = g.add(a, b);
    Ok(g.scale(sum, -coref.confidence))
}

/// Token indices labelled CES and HES.
pub fn evidence_indices(evidence: &[EvidenceLabel]) -> (Vec<usize>, Vec<usize>) {
    let mut ces = Vec::new();
    let mut hes = Vec::new();
    for (i, e) in evidence.iter().enumerate() {
        match e {
            EvidenceLabel::CES => ces.push(i),
            EvidenceLabel::HES => hes.push(i),
            EvidenceLabel::NONE => {}
        }
    }
    (ces, hes)
}

fn flow_term(g: &mut Graph, alpha: Var, ces: &[usize], hes: &[usize], lambda3: f64, lambda4: f64) -> Var {
    let total = g.sum(alpha);
    let c = g.select_sum(alpha, ces);
    let c = g.div(c, total);
    let log_c = g.log(c);
    let mut loss = g.scale(log_c, -lambda3);
    if !hes.is_empty() {
        let h = g.select_sum(alpha, hes);
        let h = g.div(h, total);
        let h = g.scale(h, lambda4);
        loss = g.add(loss, h);
    }
    loss
}

/// Flow loss `-λ3 log(Σ_CES α / Σ α) + λ4 Σ_HES α / Σ α` on passage
/// attention. With `per_step` false, α is first averaged over decoding
/// steps; otherwise the loss is computed per step and averaged.
///
/// Returns `None` when the example has no CES token.
pub fn flow_loss(
    g: &mut Graph,
    attention: &[Var],
    evidence: &[EvidenceLabel],
    lambda3: f64,
    lambda4: f64,
    per_step: bool,
) -> Result<Option<Var>> {
    let (ces, hes) = evidence_indices(evidence);
    if ces.is_empty() {
        return Ok(None);
    }
    if attention.is_empty() {
        return Err(Error::Empty("attention trace"));
    }
    let m = evidence.len();
    let alphas: Vec<Var> = attention.iter().map(|&a| g.slice_cols(a, 0, m)).collect();
    if per_step {
        let terms: Vec<Var> = alphas.iter().map(|&a| flow_term(g, a, &ces, &hes, lambda3, lambda4)).collect();
        let sum = g.add_n(&terms);
        Ok(Some(g.scale(sum, 1.0 / terms.len() as f64)))
    } else {
        let stacked = g.concat_rows(&alphas);
        let mean = g.mean_rows(stacked);
        Ok(Some(flow_term(g, mean, &ces, &hes, lambda3, lambda4)))
    }
}

/// Result of building a loss graph for one example.
pub struct LossGraph {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    /// Whether the coreference term was present.
    pub coref_applied: bool,
    /// Whether the flow term was present (the example had CES tokens).
    pub flow_applied: bool,
}

/// Teacher-forced forward pass plus the requested objective. Components
/// whose weights are all zero are left out of the graph entirely.
pub fn loss_graph(
    g: &mut Graph,
    params: &Parameters,
    ex: &IndexedExample,
    mode: &mut Mode,
    objective: Objective,
) -> Result<LossGraph> {
    ex.check(params.config())?;
    let cfg = params.config();
    let out = forward(g, params, ex, mode);
    let dists: Vec<Var> = out.steps.iter().map(|s| s.distribution).collect();
    let atts: Vec<Var> = out.steps.iter().map(|s| s.attention).collect();

    let nll = nll_loss(g, &dists, &ex.target_ids)?;
    let mut parts = Vec::new();
    let mut breakdown = LossBreakdown {
        nll: g.value(nll).item(),
        ..LossBreakdown::default()
    };
    if matches!(objective, Objective::Nll | Objective::Joint) {
        parts.push(nll);
    }

    let want_coref = matches!(objective, Objective::Coref | Objective::Joint) && (cfg.lambda1 > 0.0 || cfg.lambda2 > 0.0);
    let mut coref_applied = false;
    if let (true, Some(coref)) = (want_coref, &ex.coref) {
        let l = coref_loss(g, &atts, &dists, &ex.target_ids, ex.passage_len(), coref, cfg.lambda1, cfg.lambda2)?;
        breakdown.coref = g.value(l).item();
        parts.push(l);
        coref_applied = true;
    }

    let want_flow = matches!(objective, Objective::Flow | Objective::Joint) && (cfg.lambda3 > 0.0 || cfg.lambda4 > 0.0);
    let mut flow_applied = false;
    if want_flow {
        if let Some(l) = flow_loss(g, &atts, &ex.token_evidence, cfg.lambda3, cfg.lambda4, cfg.flow_per_step)? {
            breakdown.flow = g.value(l).item();
            parts.push(l);
            flow_applied = true;
        }
    }

    let loss = match parts.len() {
        0 => g.scale(nll, 0.0),
        1 => parts[0],
        _ => g.add_n(&parts),
    };
    breakdown.total = breakdown.nll + breakdown.coref + breakdown.flow;
    Ok(LossGraph {
        loss,
        breakdown,
        coref_applied,
        flow_applied,
    })
}

/// Loss components of one example in evaluation mode.
pub fn joint_loss(params: &Parameters, ex: &IndexedExample) -> Result<LossBreakdown> {
    let mut g = Graph::new(params.tensors());
    Ok(loss_graph(&mut g, params, ex, &mut Mode::Eval, Objective::Joint)?.breakdown)
}
