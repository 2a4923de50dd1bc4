use crate::error::{Error, Result};
use crate::expr::{self, EvalFault, Expr, Program, Var};
use crate::phase_space::{Grid2D, ScalarField};

/// An observable `A(q, p; t)`: its expression, the symbolic partials, and
/// all three sampled on a grid at a fixed time.
#[derive(Debug, Clone)]
pub struct ObservableSpec {
    expr: Expr,
    source: String,
    value_prog: Program,
    dq_prog: Program,
    dp_prog: Program,
    dt_prog: Program,
    time: f64,
    time_dependent: bool,
    zero: bool,
    pub sampled: ScalarField,
    pub d_dq: ScalarField,
    pub d_dp: ScalarField,
}

impl ObservableSpec {
    pub fn parse(source: &str, grid: &Grid2D, t: f64) -> Result<Self> {
        let expr = expr::parse(source)?;
        Self::from_expr(expr, grid, t)
    }

    pub fn from_expr(expr: Expr, grid: &Grid2D, t: f64) -> Result<Self> {
        let source = expr.to_string();
        let d_dq = expr.derivative(Var::Q);
        let d_dp = expr.derivative(Var::P);
        let d_dt = expr.derivative(Var::T);
        let value_prog = expr.compile();
        let dq_prog = d_dq.compile();
        let dp_prog = d_dp.compile();
        let mut spec = ObservableSpec {
            time_dependent: expr.depends_on(Var::T),
            zero: expr.is_zero(),
            source,
            value_prog,
            dq_prog,
            dp_prog,
            dt_prog: d_dt.compile(),
            time: t,
            sampled: ScalarField::zeros(*grid),
            d_dq: ScalarField::zeros(*grid),
            d_dp: ScalarField::zeros(*grid),
            expr,
        };
        spec.resample(t)?;
        Ok(spec)
    }

    fn resample(&mut self, t: f64) -> Result<()> {
        let grid = *self.sampled.grid();
        let sample = |prog: &Program, what: &str| -> Result<ScalarField> {
            let mut values = Vec::with_capacity(grid.len());
            for idx in 0..grid.len() {
                let (q, p) = grid.point(idx);
                values.push(prog.eval(q, p, t).map_err(|fault| self.fault(what, fault, q, p, t))?);
            }
            Ok(ScalarField::from_raw(grid, values))
        };
        let sampled = sample(&self.value_prog, "")?;
        let d_dq = sample(&self.dq_prog, "d/dq of ")?;
        let d_dp = sample(&self.dp_prog, "d/dp of ")?;
        self.sampled = sampled;
        self.d_dq = d_dq;
        self.d_dp = d_dp;
        self.time = t;
        Ok(())
    }

    fn fault(&self, what: &str, fault: EvalFault, q: f64, p: f64, t: f64) -> Error {
        Error::Eval {
            expr: format!("{what}{}", self.source),
            q,
            p,
            t,
            reason: fault.to_string(),
        }
    }

    /// The same observable sampled at another time. Cheap when the
    /// expression does not mention `t`.
    pub fn at_time(&self, t: f64) -> Result<Self> {
        let mut next = self.clone();
        if self.time_dependent {
            next.resample(t)?;
        } else {
            next.time = t;
        }
        Ok(next)
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn grid(&self) -> &Grid2D {
        self.sampled.grid()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    /// True for the constant-zero observable (e.g. `H = 0`).
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn value_at(&self, q: f64, p: f64) -> Result<f64> {
        self.value_prog
            .eval(q, p, self.time)
            .map_err(|f| self.fault("", f, q, p, self.time))
    }

    /// `(dA/dq, dA/dp)` at an arbitrary point.
    #[inline]
    pub fn gradient_at(&self, q: f64, p: f64) -> Result<(f64, f64)> {
        let t = self.time;
        let dq = self.dq_prog.eval(q, p, t).map_err(|f| self.fault("d/dq of ", f, q, p, t))?;
        let dp = self.dp_prog.eval(q, p, t).map_err(|f| self.fault("d/dp of ", f, q, p, t))?;
        Ok((dq, dp))
    }

    /// Explicit time derivative sampled on the grid.
    pub fn d_dt(&self) -> Result<ScalarField> {
        let grid = *self.grid();
        let t = self.time;
        let mut values = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let (q, p) = grid.point(idx);
            values.push(self.dt_prog.eval(q, p, t).map_err(|f| self.fault("d/dt of ", f, q, p, t))?);
        }
        Ok(ScalarField::from_raw(grid, values))
    }

    /// Largest `|dA/dq|^2 + |dA/dp|^2` over the grid nodes.
    pub fn max_gradient_sq(&self) -> f64 {
        self.d_dq
            .values()
            .iter()
            .zip(self.d_dp.values())
            .map(|(a, b)| a * a + b * b)
            .fold(0.0, f64::max)
    }
}
