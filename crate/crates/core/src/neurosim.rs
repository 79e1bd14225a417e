//! Clock-driven simulation of one expert: a Poisson input layer fully
//! connected to conductance-based LIF excitatory neurons, each paired with
//! one inhibitory neuron that suppresses every other excitatory neuron.
//!
//! All updates are forward Euler at a fixed `dt`. Nothing in here draws random
//! numbers except weight initialization, which takes an explicit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::SpikeTrain;

/// Constants of one LIF population. Potentials in mV, times in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifParams {
    pub tau: f64,
    pub e_rest: f64,
    pub e_exc: f64,
    pub e_inh: f64,
    pub v_thresh_base: f64,
    pub v_reset: f64,
    pub refractory_ms: f64,
    pub tau_ge: f64,
    pub tau_gi: f64,
}

impl LifParams {
    pub fn excitatory() -> Self {
        Self {
            tau: 100.0,
            e_rest: -65.0,
            e_exc: 0.0,
            e_inh: -100.0,
            v_thresh_base: -52.0,
            v_reset: -65.0,
            refractory_ms: 5.0,
            tau_ge: 1.0,
            tau_gi: 0.5,
        }
    }

    pub fn inhibitory() -> Self {
        Self {
            tau: 10.0,
            e_rest: -60.0,
            e_exc: 0.0,
            e_inh: -85.0,
            v_thresh_base: -40.0,
            v_reset: -45.0,
            refractory_ms: 2.0,
            tau_ge: 1.0,
            tau_gi: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("tau_ge", self.tau_ge),
            ("tau_gi", self.tau_gi),
            ("refractory_ms", self.refractory_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.e_inh < self.e_rest && self.e_rest < self.e_exc) {
            return Err(Error::config("reversal potentials must satisfy e_inh < e_rest < e_exc"));
        }
        if !(self.v_reset <= self.v_thresh_base) {
            return Err(Error::config("v_reset must not exceed v_thresh_base"));
        }
        Ok(())
    }
}

/// Adaptive threshold: `+theta_plus` per spike, exponential decay otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomeostasisParams {
    pub theta_plus: f64,
    pub theta_decay_ms: f64,
}

impl Default for HomeostasisParams {
    fn default() -> Self {
        Self {
            theta_plus: 0.05,
            theta_decay_ms: 1e7,
        }
    }
}

impl HomeostasisParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_plus >= 0.0 && self.theta_plus.is_finite()) {
            return Err(Error::config("theta_plus must be >= 0"));
        }
        if !(self.theta_decay_ms > 0.0) {
            return Err(Error::config("theta_decay_ms must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StdpParams {
    pub eta: f64,
    pub x_tar: f64,
    pub w_max: f64,
    pub mu: f64,
    pub tau_trace_ms: f64,
}

impl Default for StdpParams {
    fn default() -> Self {
        Self {
            eta: 0.01,
            x_tar: 0.4,
            w_max: 1.0,
            mu: 0.2,
            tau_trace_ms: 20.0,
        }
    }
}

impl StdpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::config("stdp eta must be > 0"));
        }
        if !(self.x_tar >= 0.0) {
            return Err(Error::config("stdp x_tar must be >= 0"));
        }
        if !(self.w_max > 0.0 && self.w_max.is_finite()) {
            return Err(Error::config("stdp w_max must be > 0"));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::config("stdp mu must be >= 0"));
        }
        if !(self.tau_trace_ms > 0.0) {
            return Err(Error::config("stdp tau_trace_ms must be > 0"));
        }
        Ok(())
    }

    /// Weight change on a postsynaptic spike:
    /// `eta * (x_pre - x_tar) * (w_max - w)^mu`.
    #[inline]
    pub fn delta(&self, x_pre: f64, w: f64) -> f64 {
        self.eta * (x_pre - self.x_tar) * (self.w_max - w).max(0.0).powf(self.mu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedWiring {
    pub w_exc_to_inh: f64,
    pub w_inh_to_exc: f64,
}

impl Default for FixedWiring {
    fn default() -> Self {
        Self {
            w_exc_to_inh: 10.4,
            w_inh_to_exc: 17.0,
        }
    }
}

/// Per-neuron dynamic state of one population.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub v: Vec<f64>,
    pub g_e: Vec<f64>,
    pub g_i: Vec<f64>,
    pub theta: Vec<f64>,
    pub refractory: Vec<f64>,
}

impl LayerState {
    pub fn resting(n: usize, params: &LifParams) -> Self {
        Self {
            v: vec![params.e_rest; n],
            g_e: vec![0.0; n],
            g_i: vec![0.0; n],
            theta: vec![0.0; n],
            refractory: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Back to rest, keeping the adaptive thresholds.
    pub fn relax(&mut self, params: &LifParams) {
        self.v.fill(params.e_rest);
        self.g_e.fill(0.0);
        self.g_i.fill(0.0);
        self.refractory.fill(0.0);
    }
}

/// Plastic input -> excitatory weights, row-major `[input][excitatory]`,
/// plus one presynaptic trace per input.
#[derive(Debug, Clone, PartialEq)]
pub struct SynapseMatrix {
    inputs: usize,
    outputs: usize,
    weights: Vec<f32>,
    traces: Vec<f64>,
}

impl SynapseMatrix {
    pub fn from_weights(inputs: usize, outputs: usize, weights: Vec<f32>) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(Error::config(format!(
                "weight buffer has {} entries, expected {inputs}x{outputs}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("weights must be finite and non-negative"));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            traces: vec![0.0; inputs],
        })
    }

    pub fn uniform(inputs: usize, outputs: usize, value: f32) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![value; inputs * outputs],
            traces: vec![0.0; inputs],
        }
    }

    /// Uniform random weights in `[0, max)`.
    pub fn random(inputs: usize, outputs: usize, max: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..inputs * outputs)
            .map(|_| rng.random::<f32>() * max)
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            traces: vec![0.0; inputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn into_weights(self) -> Vec<f32> {
        self.weights
    }

    #[inline]
    pub fn weight(&self, input: usize, output: usize) -> f32 {
        self.weights[input * self.outputs + output]
    }

    pub fn set_weight(&mut self, input: usize, output: usize, w: f32) {
        self.weights[input * self.outputs + output] = w;
    }

    pub fn traces(&self) -> &[f64] {
        &self.traces
    }

    pub fn traces_mut(&mut self) -> &mut [f64] {
        &mut self.traces
    }

    pub fn reset_traces(&mut self) {
        self.traces.fill(0.0);
    }

    pub fn decay_traces(&mut self, factor: f64) {
        for x in &mut self.traces {
            *x *= factor;
        }
    }

    pub fn column(&self, output: usize) -> Vec<f32> {
        (0..self.inputs).map(|i| self.weight(i, output)).collect()
    }

    pub fn set_column(&mut self, output: usize, column: &[f32]) {
        for (i, &w) in column.iter().enumerate() {
            self.set_weight(i, output, w);
        }
    }

    /// Rescale every excitatory neuron's incoming weights to sum to `total`.
    /// All-zero columns are left alone.
    pub fn normalize_columns(&mut self, total: f64) {
        let mut sums = vec![0.0f64; self.outputs];
        for row in self.weights.chunks_exact(self.outputs) {
            for (s, &w) in sums.iter_mut().zip(row) {
                *s += f64::from(w);
            }
        }
        let factors: Vec<f64> = sums
            .iter()
            .map(|&s| if s > 0.0 { total / s } else { 1.0 })
            .collect();
        for row in self.weights.chunks_exact_mut(self.outputs) {
            for (w, &f) in row.iter_mut().zip(&factors) {
                *w = (f64::from(*w) * f) as f32;
            }
        }
    }
}

/// Advance one population by `dt`: Euler step of the membrane equation,
/// exponential conductance decay, refractory hold, threshold test and reset.
/// With `homeostasis` set, the adaptive threshold decays every step and grows
/// by `theta_plus` per spike; without it the thresholds are frozen.
/// Indices of neurons that spiked are appended to `spiked`.
pub fn lif_step(
    state: &mut LayerState,
    params: &LifParams,
    homeostasis: Option<&HomeostasisParams>,
    dt: f64,
    spiked: &mut Vec<usize>,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::config(format!("dt must be > 0, got {dt}")));
    }
    let k = dt / params.tau;
    let ge_decay = (-dt / params.tau_ge).exp();
    let gi_decay = (-dt / params.tau_gi).exp();
    let theta_decay = homeostasis.map(|h| (-dt / h.theta_decay_ms).exp());
    for n in 0..state.v.len() {
        if let Some(f) = theta_decay {
            state.theta[n] *= f;
        }
        let refractory = state.refractory[n] > 0.0;
        if refractory {
            state.v[n] = params.v_reset;
            state.refractory[n] -= dt;
            if state.refractory[n] < 1e-9 {
                state.refractory[n] = 0.0;
            }
        } else {
            let v = state.v[n];
            state.v[n] = v
                + k * ((params.e_rest - v)
                    + state.g_e[n] * (params.e_exc - v)
                    + state.g_i[n] * (params.e_inh - v));
        }
        state.g_e[n] *= ge_decay;
        state.g_i[n] *= gi_decay;
        if !refractory && state.v[n] >= params.v_thresh_base + state.theta[n] {
            state.v[n] = params.v_reset;
            state.refractory[n] = params.refractory_ms;
            if let Some(h) = homeostasis {
                state.theta[n] += h.theta_plus;
            }
            spiked.push(n);
        }
    }
    Ok(())
}

/// Every spiking input `i` adds `w[i, e]` to each excitatory `g_e` and bumps
/// its presynaptic trace by one.
pub fn apply_input_spikes(state: &mut LayerState, syn: &mut SynapseMatrix, spikes: &[u32]) -> Result<()> {
    if state.len() != syn.outputs {
        return Err(Error::Internal(format!(
            "layer has {} neurons but synapses target {}",
            state.len(),
            syn.outputs
        )));
    }
    for &i in spikes {
        let i = i as usize;
        if i >= syn.inputs {
            return Err(Error::Internal(format!(
                "input spike index {i} out of range ({} inputs)",
                syn.inputs
            )));
        }
        let row = &syn.weights[i * syn.outputs..(i + 1) * syn.outputs];
        for (g, &w) in state.g_e.iter_mut().zip(row) {
            *g += f64::from(w);
        }
        syn.traces[i] += 1.0;
    }
    Ok(())
}

/// One-to-one excitatory -> inhibitory drive.
pub fn excite_inhibitory(exc_spikes: &[usize], wiring: &FixedWiring, inh: &mut LayerState) {
    for &e in exc_spikes {
        inh.g_e[e] += wiring.w_exc_to_inh;
    }
}

/// Each spiking inhibitory neuron `e` raises `g_i` of every excitatory neuron
/// except `e`.
pub fn inhibit_excitatory(inh_spikes: &[usize], wiring: &FixedWiring, exc: &mut LayerState) {
    if inh_spikes.is_empty() {
        return;
    }
    let total = inh_spikes.len() as f64 * wiring.w_inh_to_exc;
    for g in &mut exc.g_i {
        *g += total;
    }
    for &e in inh_spikes {
        exc.g_i[e] -= wiring.w_inh_to_exc;
    }
}

pub fn apply_lateral_inhibition(
    exc_spikes: &[usize],
    inh_spikes: &[usize],
    wiring: &FixedWiring,
    inh: &mut LayerState,
    exc: &mut LayerState,
) {
    excite_inhibitory(exc_spikes, wiring, inh);
    inhibit_excitatory(inh_spikes, wiring, exc);
}

/// Potentiate/depress every synapse onto `post` after it spikes; clamp to
/// `[0, w_max]`.
pub fn stdp_on_post_spike(syn: &mut SynapseMatrix, params: &StdpParams, post: usize) {
    let outputs = syn.outputs;
    for (i, &x) in syn.traces.iter().enumerate() {
        let w = &mut syn.weights[i * outputs + post];
        let updated = f64::from(*w) + params.delta(x, f64::from(*w));
        *w = updated.clamp(0.0, params.w_max) as f32;
    }
}

/// Everything needed to simulate an expert apart from its weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkParams {
    pub dt: f64,
    pub excitatory: LifParams,
    pub inhibitory: LifParams,
    pub homeostasis: HomeostasisParams,
    pub stdp: StdpParams,
    pub wiring: FixedWiring,
    pub weight_init_max: f32,
    /// Column sum enforced after each training presentation; `None` disables.
    pub weight_norm_total: Option<f64>,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            dt: 0.5,
            excitatory: LifParams::excitatory(),
            inhibitory: LifParams::inhibitory(),
            homeostasis: HomeostasisParams::default(),
            stdp: StdpParams::default(),
            wiring: FixedWiring::default(),
            weight_init_max: 0.3,
            weight_norm_total: Some(78.0),
        }
    }
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt must be > 0"));
        }
        self.excitatory.validate()?;
        self.inhibitory.validate()?;
        self.homeostasis.validate()?;
        self.stdp.validate()?;
        if !(self.wiring.w_exc_to_inh >= 0.0 && self.wiring.w_inh_to_exc >= 0.0) {
            return Err(Error::config("fixed wiring weights must be >= 0"));
        }
        if !(self.weight_init_max >= 0.0 && f64::from(self.weight_init_max) <= self.stdp.w_max) {
            return Err(Error::config("weight_init_max must lie in [0, w_max]"));
        }
        if let Some(t) = self.weight_norm_total {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("weight_norm_total must be > 0"));
            }
        }
        Ok(())
    }

    /// Same parameters with a different inhibitory conductance time constant
    /// on the excitatory population.
    pub fn with_tau_gi(mut self, tau_gi: f64) -> Self {
        self.excitatory.tau_gi = tau_gi;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// STDP and threshold adaptation on.
    Learn,
    /// Weights and thresholds frozen.
    Infer,
}

/// Mutable simulation state of one expert.
#[derive(Debug, Clone)]
pub struct ExpertNetwork {
    params: NetworkParams,
    syn: SynapseMatrix,
    exc: LayerState,
    inh: LayerState,
}

impl ExpertNetwork {
    pub fn new(params: NetworkParams, syn: SynapseMatrix) -> Self {
        let n = syn.outputs();
        Self {
            exc: LayerState::resting(n, &params.excitatory),
            inh: LayerState::resting(n, &params.inhibitory),
            params,
            syn,
        }
    }

    pub fn with_theta(mut self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.exc.len() {
            return Err(Error::Internal("theta snapshot length mismatch".into()));
        }
        self.exc.theta.copy_from_slice(theta);
        Ok(self)
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn synapses(&self) -> &SynapseMatrix {
        &self.syn
    }

    pub fn synapses_mut(&mut self) -> &mut SynapseMatrix {
        &mut self.syn
    }

    pub fn excitatory(&self) -> &LayerState {
        &self.exc
    }

    pub fn excitatory_mut(&mut self) -> &mut LayerState {
        &mut self.exc
    }

    pub fn theta(&self) -> &[f64] {
        &self.exc.theta
    }

    pub fn into_parts(self) -> (SynapseMatrix, Vec<f64>) {
        (self.syn, self.exc.theta)
    }

    /// Clear voltages, conductances, refractory clocks and traces.
    pub fn reset_dynamics(&mut self) {
        self.exc.relax(&self.params.excitatory);
        self.inh.relax(&self.params.inhibitory);
        self.syn.reset_traces();
    }

    fn step(&mut self, inputs: &[u32], mode: Mode, exc_spk: &mut Vec<usize>, inh_spk: &mut Vec<usize>) -> Result<()> {
        let p = self.params;
        exc_spk.clear();
        inh_spk.clear();
        apply_input_spikes(&mut self.exc, &mut self.syn, inputs)?;
        let homeo = match mode {
            Mode::Learn => Some(&p.homeostasis),
            Mode::Infer => None,
        };
        lif_step(&mut self.exc, &p.excitatory, homeo, p.dt, exc_spk)?;
        excite_inhibitory(exc_spk, &p.wiring, &mut self.inh);
        lif_step(&mut self.inh, &p.inhibitory, None, p.dt, inh_spk)?;
        inhibit_excitatory(inh_spk, &p.wiring, &mut self.exc);
        if mode == Mode::Learn {
            for &e in exc_spk.iter() {
                stdp_on_post_spike(&mut self.syn, &p.stdp, e);
            }
        }
        self.syn.decay_traces((-p.dt / p.stdp.tau_trace_ms).exp());
        Ok(())
    }

    /// Simulate one presentation window followed by `rest_ms` of silence.
    /// Returns per-neuron excitatory spike counts for the window only.
    pub fn present(&mut self, train: &SpikeTrain, mode: Mode, rest_ms: f64) -> Result<Vec<u32>> {
        if train.input_count() != self.syn.inputs() {
            return Err(Error::Internal(format!(
                "spike train has {} inputs, network expects {}",
                train.input_count(),
                self.syn.inputs()
            )));
        }
        let dt = self.params.dt;
        let mut counts = vec![0u32; self.exc.len()];
        let mut exc_spk = Vec::new();
        let mut inh_spk = Vec::new();
        for inputs in train.binned(dt) {
            self.step(&inputs, mode, &mut exc_spk, &mut inh_spk)?;
            for &e in &exc_spk {
                counts[e] += 1;
            }
        }
        let rest_steps = (rest_ms / dt).round() as usize;
        for _ in 0..rest_steps {
            self.step(&[], mode, &mut exc_spk, &mut inh_spk)?;
        }
        Ok(counts)
    }
}

/// Inference-mode presentation against borrowed frozen weights, starting from
/// rest. Equivalent to [`ExpertNetwork::present`] in [`Mode::Infer`] on a
/// freshly reset network, without copying the weight matrix.
pub fn present_frozen(
    params: &NetworkParams,
    weights: &[f32],
    theta: &[f64],
    train: &SpikeTrain,
) -> Result<Vec<u32>> {
    let outputs = theta.len();
    let inputs = train.input_count();
    if weights.len() != inputs * outputs {
        return Err(Error::Internal(format!(
            "weight matrix has {} entries, expected {inputs}x{outputs}",
            weights.len()
        )));
    }
    let mut exc = LayerState::resting(outputs, &params.excitatory);
    exc.theta.copy_from_slice(theta);
    let mut inh = LayerState::resting(outputs, &params.inhibitory);
    let mut counts = vec![0u32; outputs];
    let mut exc_spk = Vec::new();
    let mut inh_spk = Vec::new();
    for step_inputs in train.binned(params.dt) {
        exc_spk.clear();
        inh_spk.clear();
        for &i in &step_inputs {
            let row = &weights[i as usize * outputs..(i as usize + 1) * outputs];
            for (g, &w) in exc.g_e.iter_mut().zip(row) {
                *g += f64::from(w);
            }
        }
        lif_step(&mut exc, &params.excitatory, None, params.dt, &mut exc_spk)?;
        excite_inhibitory(&exc_spk, &params.wiring, &mut inh);
        lif_step(&mut inh, &params.inhibitory, None, params.dt, &mut inh_spk)?;
        inhibit_excitatory(&inh_spk, &params.wiring, &mut exc);
        for &e in &exc_spk {
            counts[e] += 1;
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_path_matches_network_infer() {
        let params = NetworkParams::default();
        let syn = SynapseMatrix::random(40, 6, 0.3, 11);
        let train = crate::imaging::poisson_from_rates(&vec![70.0; 40], 350.0, 2);
        let theta: Vec<f64> = (0..6).map(|e| e as f64 * 0.7).collect();
        let mut net = ExpertNetwork::new(params, syn.clone()).with_theta(&theta).unwrap();
        let a = net.present(&train, Mode::Infer, 0.0).unwrap();
        let b = present_frozen(&params, syn.weights(), &theta, &train).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().sum::<u32>() > 0);
    }

    fn exc() -> LifParams {
        LifParams::excitatory()
    }

    #[test]
    fn rest_is_fixed_point() {
        let p = exc();
        let mut s = LayerState::resting(3, &p);
        let mut spk = Vec::new();
        for _ in 0..100 {
            lif_step(&mut s, &p, None, 0.5, &mut spk).unwrap();
        }
        assert!(spk.is_empty());
        assert!(s.v.iter().all(|&v| v == p.e_rest));
    }

    #[test]
    fn single_step_hand_value() {
        // -65 + (0.5/100) * (0.5 * (0 - -65)) = -64.8375
        let p = exc();
        let mut s = LayerState::resting(1, &p);
        s.g_e[0] = 0.5;
        let mut spk = Vec::new();
        lif_step(&mut s, &p, None, 0.5, &mut spk).unwrap();
        assert!((s.v[0] - -64.8375).abs() < 1e-12);
    }

    #[test]
    fn conductance_decay_matches_closed_form() {
        let p = exc();
        let mut s = LayerState::resting(1, &p);
        s.g_e[0] = 1.0;
        let mut spk = Vec::new();
        for _ in 0..20 {
            lif_step(&mut s, &p, None, 0.5, &mut spk).unwrap();
        }
        let expected = (-10.0f64).exp();
        assert!((s.g_e[0] - expected).abs() / expected < 0.01);
    }

    #[test]
    fn non_positive_dt_rejected() {
        let p = exc();
        let mut s = LayerState::resting(1, &p);
        assert!(matches!(lif_step(&mut s, &p, None, 0.0, &mut Vec::new()), Err(Error::Config(_))));
        assert!(lif_step(&mut s, &p, None, -1.0, &mut Vec::new()).is_err());
    }

    #[test]
    fn spike_resets_and_holds_refractory() {
        let p = exc();
        let h = HomeostasisParams::default();
        let mut s = LayerState::resting(1, &p);
        s.v[0] = -51.0;
        let mut spk = Vec::new();
        lif_step(&mut s, &p, Some(&h), 0.5, &mut spk).unwrap();
        assert_eq!(spk, vec![0]);
        assert_eq!(s.v[0], p.v_reset);
        assert!((s.theta[0] - 0.05).abs() < 1e-15);
        // Strong drive cannot make it fire while refractory (5 ms = 10 steps).
        for _ in 0..10 {
            spk.clear();
            s.g_e[0] = 100.0;
            lif_step(&mut s, &p, Some(&h), 0.5, &mut spk).unwrap();
            assert!(spk.is_empty());
            assert_eq!(s.v[0], p.v_reset);
        }
        s.g_e[0] = 100.0;
        lif_step(&mut s, &p, Some(&h), 0.5, &mut spk).unwrap();
        assert_eq!(spk, vec![0]);
    }

    #[test]
    fn input_spikes_accumulate() {
        let p = exc();
        let mut s = LayerState::resting(4, &p);
        let mut syn = SynapseMatrix::uniform(3, 4, 0.2);
        apply_input_spikes(&mut s, &mut syn, &[]).unwrap();
        assert!(s.g_e.iter().all(|&g| g == 0.0));
        apply_input_spikes(&mut s, &mut syn, &[1]).unwrap();
        assert!(s.g_e.iter().all(|&g| g == f64::from(0.2f32)));
        assert_eq!(syn.traces(), &[0.0, 1.0, 0.0]);

        let mut s = LayerState::resting(2, &p);
        let mut syn = SynapseMatrix::from_weights(2, 2, vec![0.1, 0.3, 0.25, 0.5]).unwrap();
        apply_input_spikes(&mut s, &mut syn, &[0, 1]).unwrap();
        assert_eq!(s.g_e[0], f64::from(0.1f32) + f64::from(0.25f32));
        assert_eq!(s.g_e[1], f64::from(0.3f32) + f64::from(0.5f32));
    }

    #[test]
    fn out_of_range_input_is_internal_error() {
        let p = exc();
        let mut s = LayerState::resting(2, &p);
        let mut syn = SynapseMatrix::uniform(3, 2, 0.2);
        assert!(matches!(
            apply_input_spikes(&mut s, &mut syn, &[3]),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn lateral_inhibition_wiring() {
        let w = FixedWiring::default();
        let mut inh = LayerState::resting(3, &LifParams::inhibitory());
        let mut ex = LayerState::resting(3, &exc());

        apply_lateral_inhibition(&[], &[], &w, &mut inh, &mut ex);
        assert!(inh.g_e.iter().all(|&g| g == 0.0));

        apply_lateral_inhibition(&[2], &[0], &w, &mut inh, &mut ex);
        assert_eq!(inh.g_e, vec![0.0, 0.0, w.w_exc_to_inh]);
        assert_eq!(ex.g_i, vec![0.0, w.w_inh_to_exc, w.w_inh_to_exc]);

        let mut ex = LayerState::resting(3, &exc());
        inhibit_excitatory(&[0, 1, 2], &w, &mut ex);
        assert!(ex.g_i.iter().all(|&g| (g - 2.0 * w.w_inh_to_exc).abs() < 1e-12));
    }

    #[test]
    fn stdp_hand_values() {
        let p = StdpParams {
            eta: 0.01,
            x_tar: 0.0,
            w_max: 1.0,
            mu: 1.0,
            tau_trace_ms: 20.0,
        };
        assert!((p.delta(1.0, 0.5) - 0.005).abs() < 1e-15);
        assert_eq!(p.delta(1.0, 1.0), 0.0);
        let d = StdpParams::default();
        assert_eq!(d.delta(3.0, d.w_max), 0.0);
        assert!(d.delta(0.0, 0.5) < 0.0);
    }

    #[test]
    fn stdp_updates_only_target_column() {
        let p = StdpParams::default();
        let mut syn = SynapseMatrix::uniform(2, 2, 0.5);
        syn.traces_mut()[0] = 1.0;
        stdp_on_post_spike(&mut syn, &p, 1);
        assert_eq!(syn.weight(0, 0), 0.5);
        assert!(syn.weight(0, 1) > 0.5);
        assert!(syn.weight(1, 1) < 0.5);
    }

    #[test]
    fn normalize_columns_hits_target() {
        let mut syn = SynapseMatrix::random(50, 3, 0.3, 1);
        syn.normalize_columns(10.0);
        for e in 0..3 {
            let s: f64 = syn.column(e).iter().map(|&w| f64::from(w)).sum();
            assert!((s - 10.0).abs() < 1e-4);
        }
    }

    #[test]
    fn empty_train_gives_no_spikes() {
        let params = NetworkParams::default();
        let mut net = ExpertNetwork::new(params, SynapseMatrix::random(16, 4, 0.3, 3));
        let counts = net.present(&SpikeTrain::silent(16, 350.0), Mode::Infer, 150.0).unwrap();
        assert_eq!(counts, vec![0; 4]);
    }

    #[test]
    fn winner_take_all_strongest_neuron_wins() {
        // Three neurons, identical drive pattern, neuron 1 has the largest
        // summed input weight: it reaches threshold first and its inhibitory
        // partner silences the other two.
        let inputs = 20;
        let mut w = vec![0.0f32; inputs * 3];
        for i in 0..inputs {
            w[i * 3] = 0.05;
            w[i * 3 + 1] = 0.1;
            w[i * 3 + 2] = 0.06;
        }
        let syn = SynapseMatrix::from_weights(inputs, 3, w).unwrap();
        let params = NetworkParams::default();
        let mut net = ExpertNetwork::new(params, syn);
        let times: Vec<Vec<f64>> = (0..inputs)
            .map(|i| (0..60).map(|k| k as f64 * 5.0 + (i as f64) * 0.01).collect())
            .collect();
        let train = SpikeTrain::new(350.0, times).unwrap();
        let counts = net.present(&train, Mode::Infer, 0.0).unwrap();
        assert!(counts[1] > 0);
        assert_eq!(counts[0], 0);
        assert_eq!(counts[2], 0);
    }

    #[test]
    fn presentation_is_deterministic() {
        let params = NetworkParams::default();
        let syn = SynapseMatrix::random(30, 5, 0.3, 9);
        let rates = vec![60.0; 30];
        let train = crate::imaging::poisson_from_rates(&rates, 350.0, 5);
        let a = ExpertNetwork::new(params, syn.clone()).present(&train, Mode::Learn, 150.0).unwrap();
        let b = ExpertNetwork::new(params, syn).present(&train, Mode::Learn, 150.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infer_mode_freezes_weights_and_theta() {
        let params = NetworkParams::default();
        let syn = SynapseMatrix::random(30, 5, 0.3, 9);
        let train = crate::imaging::poisson_from_rates(&vec![120.0; 30], 350.0, 5);
        let mut net = ExpertNetwork::new(params, syn.clone());
        let counts = net.present(&train, Mode::Infer, 0.0).unwrap();
        assert!(counts.iter().sum::<u32>() > 0);
        assert_eq!(net.synapses().weights(), syn.weights());
        assert!(net.theta().iter().all(|&t| t == 0.0));
    }
}
