//! Random small graphs evaluated two ways: on the tape (f32, reverse mode)
//! and by a separate f64 interpreter used for central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmr_autodiff::{Tape, Tensor, Var};

pub const ROWS: usize = 2;
pub const COLS: usize = 3;

#[derive(Clone, Debug)]
pub enum Step {
    Elu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Square(usize),
    Scale(usize, f32),
    Abs(usize),
    Clamp(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Minimum(usize, usize),
    /// Right-multiply by square parameter `p`.
    MatMul(usize, usize),
    /// Concat two values, then slice a `COLS`-wide window at `offset`.
    ConcatSlice(usize, usize, usize),
    StopGradient(usize),
}

#[derive(Clone, Debug)]
pub struct Program {
    /// First `n_inputs` are `[ROWS,COLS]`, the rest `[COLS,COLS]`.
    pub params: Vec<Vec<f64>>,
    pub n_inputs: usize,
    pub steps: Vec<Step>,
}

impl Program {
    pub fn random(seed: u64, smooth: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_inputs = rng.random_range(1..=3);
        let n_square = rng.random_range(1..=2);
        let mut params: Vec<Vec<f64>> = Vec::new();
        for _ in 0..n_inputs {
            params.push((0..ROWS * COLS).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
        for _ in 0..n_square {
            params.push((0..COLS * COLS).map(|_| rng.random_range(-0.8..0.8)).collect());
        }
        // Round to f32 so both evaluators start from identical values.
        for p in &mut params {
            for v in p.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        let n_steps = rng.random_range(3..=9);
        let mut steps = Vec::new();
        let mut live = n_inputs;
        for _ in 0..n_steps {
            let a = rng.random_range(0..live);
            let b = rng.random_range(0..live);
            let step = match rng.random_range(0..if smooth { 9 } else { 13 }) {
                0 => Step::Elu(a),
                1 => Step::Sigmoid(a),
                2 => Step::Tanh(a),
                3 => Step::Square(a),
                4 => Step::Scale(a, rng.random_range(-2.0..2.0)),
                5 => Step::Add(a, b),
                6 => Step::Mul(a, b),
                7 => Step::MatMul(a, n_inputs + rng.random_range(0..n_square)),
                8 => Step::ConcatSlice(a, b, rng.random_range(0..=COLS)),
                9 => Step::Abs(a),
                10 => Step::Clamp(a),
                11 => Step::Minimum(a, b),
                _ => Step::StopGradient(a),
            };
            steps.push(step);
            live += 1;
        }
        Self { params, n_inputs, steps }
    }

    fn param_shape(&self, i: usize) -> [usize; 2] {
        if i < self.n_inputs {
            [ROWS, COLS]
        } else {
            [COLS, COLS]
        }
    }

    /// Build on a tape; loss = mean of the elementwise sum of all values.
    pub fn build(&self, tape: &mut Tape) -> (Vec<Var>, Var) {
        let pv: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let [r, c] = self.param_shape(i);
                tape.param(Tensor::matrix(r, c, p.iter().map(|&v| v as f32).collect()).unwrap())
            })
            .collect();
        let mut vals: Vec<Var> = pv[..self.n_inputs].to_vec();
        for s in &self.steps {
            let v = match *s {
                Step::Elu(a) => tape.elu(vals[a]),
                Step::Sigmoid(a) => tape.sigmoid(vals[a]),
                Step::Tanh(a) => tape.tanh(vals[a]),
                Step::Square(a) => tape.square(vals[a]),
                Step::Scale(a, k) => tape.scale(vals[a], k),
                Step::Abs(a) => tape.abs(vals[a]),
                Step::Clamp(a) => tape.clamp(vals[a], -0.5, 0.5),
                Step::Add(a, b) => tape.add(vals[a], vals[b]),
                Step::Mul(a, b) => tape.mul(vals[a], vals[b]),
                Step::Minimum(a, b) => tape.minimum(vals[a], vals[b]),
                Step::MatMul(a, p) => tape.matmul(vals[a], pv[p]),
                Step::ConcatSlice(a, b, off) => {
                    let c = tape.concat_cols(&[vals[a], vals[b]]).unwrap();
                    tape.slice_cols(c, off, COLS)
                }
                Step::StopGradient(a) => tape.stop_gradient(vals[a]),
            }
            .unwrap();
            vals.push(v);
        }
        let mut acc = vals[0];
        for &v in &vals[1..] {
            acc = tape.add(acc, v).unwrap();
        }
        (pv, tape.mean(acc).unwrap())
    }

    /// f64 interpreter. `frozen[i]`, when set, replaces the output of step
    /// `i`. Returns `(loss, values, min distance of any kink input to its kink)`.
    pub fn run(&self, params: &[Vec<f64>], frozen: &[Option<Vec<f64>>]) -> (f64, Vec<Vec<f64>>, f64) {
        let mut kink = f64::INFINITY;
        let mut vals: Vec<Vec<f64>> = params[..self.n_inputs].to_vec();
        for (i, s) in self.steps.iter().enumerate() {
            if let Some(v) = frozen.get(i).and_then(|f| f.clone()) {
                vals.push(v);
                continue;
            }
            let un = |a: usize, f: &mut dyn FnMut(f64) -> f64| vals[a].iter().map(|&x| f(x)).collect::<Vec<_>>();
            let bin = |a: usize, b: usize, f: &mut dyn FnMut(f64, f64) -> f64| {
                vals[a].iter().zip(&vals[b]).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>()
            };
            let v = match *s {
                Step::Elu(a) => un(a, &mut |x| {
                    kink = kink.min(x.abs());
                    if x > 0.0 {
                        x
                    } else {
                        x.exp_m1()
                    }
                }),
                Step::Sigmoid(a) => un(a, &mut |x| 1.0 / (1.0 + (-x).exp())),
                Step::Tanh(a) => un(a, &mut |x| x.tanh()),
                Step::Square(a) => un(a, &mut |x| x * x),
                Step::Scale(a, k) => un(a, &mut |x| x * k as f64),
                Step::Abs(a) => un(a, &mut |x| {
                    kink = kink.min(x.abs());
                    x.abs()
                }),
                Step::Clamp(a) => un(a, &mut |x| {
                    kink = kink.min((x - 0.5).abs()).min((x + 0.5).abs());
                    x.clamp(-0.5, 0.5)
                }),
                Step::Add(a, b) => bin(a, b, &mut |x, y| x + y),
                Step::Mul(a, b) => bin(a, b, &mut |x, y| x * y),
                Step::Minimum(a, b) => bin(a, b, &mut |x, y| {
                    kink = kink.min((x - y).abs());
                    x.min(y)
                }),
                Step::MatMul(a, p) => {
                    let (x, w) = (&vals[a], &params[p]);
                    let mut out = vec![0.0; ROWS * COLS];
                    for i in 0..ROWS {
                        for j in 0..COLS {
                            out[i * COLS + j] = (0..COLS).map(|k| x[i * COLS + k] * w[k * COLS + j]).sum();
                        }
                    }
                    out
                }
                Step::ConcatSlice(a, b, off) => {
                    let mut out = Vec::with_capacity(ROWS * COLS);
                    for r in 0..ROWS {
                        let mut row = vals[a][r * COLS..(r + 1) * COLS].to_vec();
                        row.extend_from_slice(&vals[b][r * COLS..(r + 1) * COLS]);
                        out.extend_from_slice(&row[off..off + COLS]);
                    }
                    out
                }
                Step::StopGradient(a) => vals[a].clone(),
            };
            vals.push(v);
        }
        let total: f64 = vals.iter().flat_map(|v| v.iter()).sum();
        (total / (ROWS * COLS) as f64, vals, kink)
    }

    /// Central differences with stop-gradient outputs frozen at the base
    /// point. Entries whose perturbation crosses a kink are flagged unusable.
    pub fn fd_gradient(&self, h: f64) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
        let (_, base_vals, _) = self.run(&self.params, &[]);
        let frozen: Vec<Option<Vec<f64>>> = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| match s {
                Step::StopGradient(_) => Some(base_vals[self.n_inputs + i].clone()),
                _ => None,
            })
            .collect();
        let mut grads = Vec::new();
        let mut usable = Vec::new();
        for p in 0..self.params.len() {
            let mut g = Vec::new();
            let mut ok = Vec::new();
            for e in 0..self.params[p].len() {
                let mut plus = self.params.clone();
                plus[p][e] += h;
                let mut minus = self.params.clone();
                minus[p][e] -= h;
                let (fp, _, k1) = self.run(&plus, &frozen);
                let (fm, _, k2) = self.run(&minus, &frozen);
                g.push((fp - fm) / (2.0 * h));
                ok.push(k1.min(k2) > 4.0 * h);
            }
            grads.push(g);
            usable.push(ok);
        }
        (grads, usable)
    }
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Max relative error between tape and finite-difference gradients over
/// every usable entry of one random program.
pub fn check_program(seed: u64, smooth: bool) -> f64 {
    let prog = Program::random(seed, smooth);
    let mut tape = Tape::new();
    let (pv, loss) = prog.build(&mut tape);
    let grads = tape.backward(loss).unwrap();
    let (fd, usable) = prog.fd_gradient(1e-3);
    let mut worst = 0.0f64;
    for (p, var) in pv.iter().enumerate() {
        let g = grads.wrt(*var);
        for (e, &ge) in g.data().iter().enumerate() {
            if usable[p][e] {
                worst = worst.max(rel_err(ge as f64, fd[p][e]));
            }
        }
    }
    worst
}
