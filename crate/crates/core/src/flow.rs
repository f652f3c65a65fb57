//! Event-driven integration of the projected descent flow.
//!
//! Between events the flow follows the smooth field `P_S(-∇f)` for a fixed
//! sliding face `S`, integrated with an adaptive Dormand–Prince 5(4) pair.
//! Three things interrupt a segment: the trajectory reaches an inactive
//! constraint (capture), the pull away from a held constraint changes sign
//! (release), or a monitored function level is crossed. Event times are
//! resolved by bisection against single fixed-size Runge–Kutta steps from the
//! segment point, the state is snapped exactly onto the event face, and the
//! sliding face is recomputed from the projection cascade.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::domain::{Domain, DomainError, StratumId};
use crate::field::{
    modified_gradient, projected_descent, release_multiplier, Descent, FieldError, ScalarField,
    Tolerances,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("integration step size underflowed at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("trajectory left the domain at t = {t}")]
    Escaped { t: f64 },
    #[error("flow map is not differentiable here: perturbed trajectories cross different event sequences")]
    NotDifferentiable,
}

/// Integration budgets and tolerances for one run.
#[derive(Debug, Clone, Copy)]
pub struct FlowSettings {
    pub rtol: f64,
    pub atol: f64,
    /// Total flow-time budget before giving up on convergence.
    pub t_max: f64,
    pub max_events: usize,
    pub max_steps: usize,
    /// Keep a per-step trace (events are always kept).
    pub record_trace: bool,
}

impl Default for FlowSettings {
    fn default() -> FlowSettings {
        FlowSettings {
            rtol: 1e-10,
            atol: 1e-12,
            t_max: 1e4,
            max_events: 256,
            max_steps: 200_000,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// Hit the wall of a previously inactive constraint.
    Capture(usize),
    /// A held constraint stopped pulling; the flow leaves its wall.
    Release(usize),
    /// Crossed the monitored function level.
    Level,
}

impl EventKind {
    pub fn label(&self) -> String {
        match self {
            EventKind::Capture(k) => format!("capture:{k}"),
            EventKind::Release(k) => format!("release:{k}"),
            EventKind::Level => "level".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Event {
    pub t: f64,
    pub x: DVector<f64>,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowOutcome {
    /// Converged to a zero of the projected descent field.
    Stationary,
    /// Stopped on the requested level crossing.
    LevelReached,
    /// Integrated up to the requested time.
    TimeReached,
    /// Ran out of time, steps, or events before converging.
    Budget,
}

#[derive(Debug, Clone)]
pub struct TracePoint {
    pub t: f64,
    pub x: DVector<f64>,
    pub depth: usize,
    pub event: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FlowPath {
    pub end: DVector<f64>,
    pub end_t: f64,
    pub end_face: StratumId,
    /// Cascade result at the endpoint, when one was computed there.
    pub end_descent: Option<Descent>,
    pub outcome: FlowOutcome,
    pub events: Vec<Event>,
    pub trace: Vec<TracePoint>,
}

enum StopRule {
    Convergence,
    Level(f64),
    Time(f64),
}

pub struct Integrator<'a> {
    pub domain: &'a Domain,
    pub field: &'a ScalarField,
    pub tol: Tolerances,
    pub settings: FlowSettings,
}

// Dormand–Prince 5(4) tableau
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct StepResult {
    x: DVector<f64>,
    /// Scaled error estimate; accept when <= 1.
    err: f64,
    /// Field value at the accepted endpoint (the last stage lands there).
    v_end: DVector<f64>,
    /// Intermediate stage states with their step fractions, used as cheap
    /// probes for sign changes inside the step.
    probes: Vec<(f64, DVector<f64>)>,
}

fn dp54_step<F>(
    vf: &mut F,
    x0: &DVector<f64>,
    h: f64,
    atol: f64,
    rtol: f64,
) -> Result<StepResult, FlowError>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>, FlowError>,
{
    let n = x0.len();
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(vf(x0)?);
    let mut probes = Vec::with_capacity(5);
    let mut x5 = x0.clone();
    for s in 0..6 {
        let mut y = x0.clone();
        for (j, kj) in k.iter().enumerate() {
            let a = A[s][j];
            if a != 0.0 {
                y += kj * (a * h);
            }
        }
        if s < 5 {
            probes.push((C[s + 1], y.clone()));
        } else {
            // the last stage sits at the 5th-order solution itself, so its
            // field value is the endpoint field value
            x5 = y.clone();
        }
        k.push(vf(&y)?);
    }
    let mut x4 = x0.clone();
    for (j, kj) in k.iter().enumerate() {
        if B4[j] != 0.0 {
            x4 += kj * (B4[j] * h);
        }
    }
    let mut err = 0.0;
    for i in 0..n {
        let sc = atol + rtol * x0[i].abs().max(x5[i].abs());
        let e = (x5[i] - x4[i]) / sc;
        err += e * e;
    }
    let err = (err / n as f64).sqrt();
    let v_end = k.pop().unwrap();
    Ok(StepResult {
        x: x5,
        err,
        v_end,
        probes,
    })
}

fn rk4_step<F>(vf: &mut F, x0: &DVector<f64>, h: f64) -> Result<DVector<f64>, FlowError>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>, FlowError>,
{
    if h == 0.0 {
        return Ok(x0.clone());
    }
    let k1 = vf(x0)?;
    let k2 = vf(&(x0 + &k1 * (h / 2.0)))?;
    let k3 = vf(&(x0 + &k2 * (h / 2.0)))?;
    let k4 = vf(&(x0 + &k3 * h))?;
    Ok(x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

struct Candidate {
    tau: f64,
    x: DVector<f64>,
    kind: EventKind,
}

impl<'a> Integrator<'a> {
    pub fn new(domain: &'a Domain, field: &'a ScalarField) -> Integrator<'a> {
        Integrator {
            domain,
            field,
            tol: Tolerances::for_domain(domain),
            settings: FlowSettings::default(),
        }
    }

    /// Follow the descent flow until it converges to a stationary point of
    /// the projection cascade (or a budget runs out).
    pub fn flow(&self, x0: &DVector<f64>) -> Result<FlowPath, FlowError> {
        self.run(x0, StopRule::Convergence)
    }

    /// Follow the flow until `f` first crosses `level` going down.
    pub fn flow_to_level(&self, x0: &DVector<f64>, level: f64) -> Result<FlowPath, FlowError> {
        self.run(x0, StopRule::Level(level))
    }

    /// Integrate for exactly `t_end` flow time (events still apply;
    /// stationary points just sit still).
    pub fn flow_for_time(&self, x0: &DVector<f64>, t_end: f64) -> Result<FlowPath, FlowError> {
        self.run(x0, StopRule::Time(t_end))
    }

    fn cascade(&self, x: &DVector<f64>, stratum: &StratumId) -> Result<Descent, FlowError> {
        modified_gradient(self.domain, self.field, x, stratum, &self.tol).map_err(FlowError::from)
    }

    fn run(&self, x0: &DVector<f64>, stop: StopRule) -> Result<FlowPath, FlowError> {
        let metric = self.field.metric();
        let stationary_exit = !matches!(stop, StopRule::Time(_));
        let mut x = x0.clone();
        let mut t = 0.0;
        let mut steps = 0usize;
        let mut events: Vec<Event> = Vec::new();
        let mut trace: Vec<TracePoint> = Vec::new();

        let mut stratum = self.domain.locate(&x, self.tol.active)?;
        let mut desc = self.cascade(&x, &stratum)?;

        let finish = |x: DVector<f64>,
                      t: f64,
                      face: StratumId,
                      desc: Option<Descent>,
                      outcome: FlowOutcome,
                      events: Vec<Event>,
                      trace: Vec<TracePoint>| {
            Ok(FlowPath {
                end: x,
                end_t: t,
                end_face: face,
                end_descent: desc,
                outcome,
                events,
                trace,
            })
        };

        if self.settings.record_trace {
            trace.push(TracePoint {
                t,
                x: x.clone(),
                depth: stratum.depth(),
                event: None,
            });
        }

        if stationary_exit && desc.is_stationary(metric, &self.tol) {
            let face = desc.face.clone();
            return finish(x, t, face, Some(desc), FlowOutcome::Stationary, events, trace);
        }

        'segments: loop {
            let face = desc.face.clone();
            let mut vf = |p: &DVector<f64>| {
                projected_descent(self.domain, self.field, &face, p).map_err(FlowError::from)
            };

            let speed = metric.norm(&desc.vector).max(1e-300);
            let h_cap = 0.25 * (1.0 + self.domain.diameter()) / speed;
            let mut h = 0.01 * h_cap;

            loop {
                if steps >= self.settings.max_steps
                    || events.len() >= self.settings.max_events
                    || t >= self.settings.t_max
                {
                    return finish(x, t, face, None, FlowOutcome::Budget, events, trace);
                }
                steps += 1;

                if let StopRule::Time(t_end) = stop {
                    if t_end - t <= 1e-15 * t_end.max(1.0) {
                        let s = self.domain.locate(&x, self.tol.active)?;
                        return finish(x, t, s, None, FlowOutcome::TimeReached, events, trace);
                    }
                    h = h.min(t_end - t);
                }

                let step = dp54_step(&mut vf, &x, h, self.settings.atol, self.settings.rtol)?;
                if step.err > 1.0 {
                    h *= (0.9 * step.err.powf(-0.2)).max(0.2);
                    if h < 1e-14 * (1.0 + t) {
                        return Err(FlowError::StepUnderflow { t });
                    }
                    continue;
                }

                match self.scan_events(&mut vf, &x, &step, h, &face, &stop)? {
                    Some(cand) => {
                        t += cand.tau;
                        let is_level = cand.kind == EventKind::Level;
                        let xe = match &cand.kind {
                            EventKind::Capture(k) => {
                                let snapped = self.domain.snap_to_constraint(&cand.x, *k);
                                let s = self.domain.locate(&snapped, self.tol.active)?;
                                self.domain.snap_to_face(&snapped, &s)
                            }
                            _ => self.domain.snap_to_face(&cand.x, &face),
                        };
                        x = xe;
                        events.push(Event {
                            t,
                            x: x.clone(),
                            kind: cand.kind.clone(),
                        });
                        if self.settings.record_trace {
                            trace.push(TracePoint {
                                t,
                                x: x.clone(),
                                depth: self.domain.locate(&x, self.tol.active)?.depth(),
                                event: Some(cand.kind.label()),
                            });
                        }
                        if is_level {
                            if let StopRule::Level(_) = stop {
                                let s = self.domain.locate(&x, self.tol.active)?;
                                return finish(
                                    x,
                                    t,
                                    s,
                                    None,
                                    FlowOutcome::LevelReached,
                                    events,
                                    trace,
                                );
                            }
                        }
                        stratum = self.domain.locate(&x, self.tol.active)?;
                        desc = self.cascade(&x, &stratum)?;
                        if stationary_exit && desc.is_stationary(metric, &self.tol) {
                            let f = desc.face.clone();
                            return finish(
                                x,
                                t,
                                f,
                                Some(desc),
                                FlowOutcome::Stationary,
                                events,
                                trace,
                            );
                        }
                        continue 'segments;
                    }
                    None => {
                        x = self.domain.snap_to_face(&step.x, &face);
                        t += h;
                        if !self.domain.contains(&x, 10.0 * self.tol.active) {
                            return Err(FlowError::Escaped { t });
                        }
                        if self.settings.record_trace {
                            trace.push(TracePoint {
                                t,
                                x: x.clone(),
                                depth: face.depth(),
                                event: None,
                            });
                        }
                        let grow = if step.err <= 1e-30 {
                            5.0
                        } else {
                            (0.9 * step.err.powf(-0.2)).clamp(0.2, 5.0)
                        };
                        h = (h * grow).min(h_cap);

                        // cheap stationarity screen on the free endpoint
                        // field value, confirmed by the full cascade
                        if stationary_exit {
                            let vn = metric.norm(&step.v_end);
                            if vn < 10.0
                                * self.tol.stationary
                                * (1.0 + metric.norm(&desc.gradient))
                            {
                                let s = self.domain.locate(&x, self.tol.active)?;
                                let d = self.cascade(&x, &s)?;
                                if d.is_stationary(metric, &self.tol) {
                                    let f = d.face.clone();
                                    return finish(
                                        x,
                                        t,
                                        f,
                                        Some(d),
                                        FlowOutcome::Stationary,
                                        events,
                                        trace,
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Find the earliest event inside an accepted step, if any.
    fn scan_events<F>(
        &self,
        vf: &mut F,
        x0: &DVector<f64>,
        step: &StepResult,
        h: f64,
        face: &StratumId,
        stop: &StopRule,
    ) -> Result<Option<Candidate>, FlowError>
    where
        F: FnMut(&DVector<f64>) -> Result<DVector<f64>, FlowError>,
    {
        let mut best: Option<Candidate> = None;
        let mut consider = |c: Candidate| {
            if best.as_ref().map_or(true, |b| c.tau < b.tau) {
                best = Some(c);
            }
        };

        // captures: inactive constraints whose value dips below zero at a
        // stage probe or the endpoint
        for (k, con) in self.domain.constraints().iter().enumerate() {
            if face.contains(k) {
                continue;
            }
            let c0 = con.value(x0);
            if c0 <= self.tol.active {
                continue; // on or near this wall by choice: lifting off
            }
            let mut hit_frac = None;
            for (frac, px) in step
                .probes
                .iter()
                .map(|(f, p)| (*f, p))
                .chain(std::iter::once((1.0, &step.x)))
            {
                if con.value(px) < 0.0 {
                    hit_frac = Some(frac);
                    break;
                }
            }
            if let Some(frac) = hit_frac {
                if let Some((tau, xe)) =
                    self.bisect(vf, x0, h, frac, |p| Ok(con.value(p)), c0 > 0.0)?
                {
                    consider(Candidate {
                        tau,
                        x: xe,
                        kind: EventKind::Capture(k),
                    });
                } else if con.value(&step.x) < 0.0 {
                    // endpoint is over the wall but the probe integrator
                    // disagrees by a hair: force the event at the endpoint
                    consider(Candidate {
                        tau: h,
                        x: step.x.clone(),
                        kind: EventKind::Capture(k),
                    });
                }
            }
        }

        // releases: a held constraint's pull switches sign
        for &k in face.active() {
            let m0 = release_multiplier(self.domain, self.field, face, k, x0)?;
            if m0 > 0.0 {
                continue; // never went negative on this segment: no crossing
            }
            let m1 = release_multiplier(self.domain, self.field, face, k, &step.x)?;
            if m1 > 0.0 {
                if let Some((tau, xe)) = self.bisect(
                    vf,
                    x0,
                    h,
                    1.0,
                    |p| release_multiplier(self.domain, self.field, face, k, p).map_err(FlowError::from),
                    false,
                )? {
                    consider(Candidate {
                        tau,
                        x: xe,
                        kind: EventKind::Release(k),
                    });
                } else {
                    consider(Candidate {
                        tau: h,
                        x: step.x.clone(),
                        kind: EventKind::Release(k),
                    });
                }
            }
        }

        // monitored level: f decreases along the flow
        if let StopRule::Level(level) = stop {
            let l0 = self.field.value(x0)? - level;
            let l1 = self.field.value(&step.x)? - level;
            if l0 > 0.0 && l1 <= 0.0 {
                if let Some((tau, xe)) =
                    self.bisect(vf, x0, h, 1.0, |p| Ok(self.field.value(p)? - level), true)?
                {
                    consider(Candidate {
                        tau,
                        x: xe,
                        kind: EventKind::Level,
                    });
                } else {
                    consider(Candidate {
                        tau: h,
                        x: step.x.clone(),
                        kind: EventKind::Level,
                    });
                }
            }
        }

        Ok(best)
    }

    /// Bisect for the first sign change of `q` along single fixed-size steps
    /// from `x0`. `positive_at_zero` gives the sign at τ = 0; the bracket
    /// right end starts at `frac·h` and grows toward `h` if the probe
    /// disagreed with the step integrator. Returns the event time

    /// and state, or None if no bracket exists under this evaluator.
    fn bisect<F, Q>(
        &self,
        vf: &mut F,
        x0: &DVector<f64>,
        h: f64,
        frac: f64,
        mut q: Q,
        positive_at_zero: bool,
    ) -> Result<Option<(f64, DVector<f64>)>, FlowError>
    where
        F: FnMut(&DVector<f64>) -> Result<DVector<f64>, FlowError>,
        Q: FnMut(&DVector<f64>) -> Result<f64, FlowError>,
    {
        let crossed = |v: f64| {
            if positive_at_zero {
                v < 0.0
            } else {
                v > 0.0
            }
        };
        // establish the right end of the bracket under the rk4 evaluator
        let mut hi = (frac * h).min(h);
        let mut xhi = rk4_step(vf, x0, hi)?;
        if !crossed(q(&xhi)?) {
            let mut found = false;
            for grow in [0.25, 0.5, 1.0] {
                let cand = (hi + (h - hi) * grow).min(h);
                if cand <= hi {
                    continue;
                }
                let xc = rk4_step(vf, x0, cand)?;
                if crossed(q(&xc)?) {
                    hi = cand;
                    xhi = xc;
                    found = true;
                    break;
                }
            }
            if !found {
                return Ok(None);
            }
        }
        let mut lo = 0.0;
        let tol_t = self.tol.event_time * h.max(1e-300);
        for _ in 0..80 {
            if hi - lo <= tol_t {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let xm = rk4_step(vf, x0, mid)?;
            if crossed(q(&xm)?) {
                hi = mid;
                xhi = xm;
            } else {
                lo = mid;
            }
        }
        Ok(Some((hi, xhi)))
    }

    /// Directional derivatives of the time-`t_end` flow map by central
    /// differences along `dirs`. The perturbed runs must cross the same
    /// event sequence; if they refuse to even after shrinking the
    /// perturbation, the map is not differentiable at this start.
    pub fn flow_jacobian(
        &self,
        x0: &DVector<f64>,
        t_end: f64,
        dirs: &[DVector<f64>],
        delta: f64,
    ) -> Result<DMatrix<f64>, FlowError> {
        let n = self.domain.dim();
        let base = self.run(x0, StopRule::Time(t_end))?;
        let base_sig = signature(&base);
        let mut out = DMatrix::zeros(n, dirs.len());
        for (j, d) in dirs.iter().enumerate() {
            let mut dd = delta;
            let mut col = None;
            for _ in 0..6 {
                let pp = self.run(&(x0 + d * dd), StopRule::Time(t_end))?;
                let pm = self.run(&(x0 - d * dd), StopRule::Time(t_end))?;
                if signature(&pp) == base_sig && signature(&pm) == base_sig {
                    col = Some((&pp.end - &pm.end) / (2.0 * dd));
                    break;
                }
                dd *= 0.5;
            }
            match col {
                Some(c) => out.set_column(j, &c),
                None => return Err(FlowError::NotDifferentiable),
            }
        }
        Ok(out)
    }
}

fn signature(p: &FlowPath) -> Vec<EventKind> {
    p.events.iter().map(|e| e.kind.clone()).collect()
}
