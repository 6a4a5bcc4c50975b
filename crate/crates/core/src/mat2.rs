//! Complex 2×2 matrices with exact inverses and a closed-form spectral norm,
//! plus a log-scaled variant for cocycle products whose entries overflow f64.

use num_complex::Complex64;

pub type C64 = Complex64;

pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec2 {
    pub x: C64,
    pub y: C64,
}

impl Vec2 {
    pub fn new(x: C64, y: C64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(&self) -> f64 {
        (self.x.norm_sqr() + self.y.norm_sqr()).sqrt()
    }

    pub fn sub(&self, o: &Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

/// Row-major 2×2 matrix [[a, b], [c, d]].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2 {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl Mat2 {
    pub fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn identity() -> Self {
        Mat2::new(c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(1.0, 0.0))
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }

    pub fn scale(&self, s: C64) -> Mat2 {
        Mat2::new(s * self.a, s * self.b, s * self.c, s * self.d)
    }

    pub fn apply(&self, v: &Vec2) -> Vec2 {
        Vec2::new(self.a * v.x + self.b * v.y, self.c * v.x + self.d * v.y)
    }

    pub fn det(&self) -> C64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> C64 {
        self.a + self.d
    }

    /// Adjugate over determinant; exact for the unimodular-determinant factors
    /// used throughout, where no pivoting question arises.
    pub fn inverse(&self) -> Mat2 {
        let det = self.det();
        Mat2::new(self.d / det, -self.b / det, -self.c / det, self.a / det)
    }

    pub fn conj_transpose(&self) -> Mat2 {
        Mat2::new(self.a.conj(), self.c.conj(), self.b.conj(), self.d.conj())
    }

    pub fn norm_fro_sqr(&self) -> f64 {
        self.a.norm_sqr() + self.b.norm_sqr() + self.c.norm_sqr() + self.d.norm_sqr()
    }

    /// Largest singular value: σ² = (f + √(f² − 4g²))/2 with f = ‖A‖_F², g = |det A|.
    pub fn norm_spec(&self) -> f64 {
        let f = self.norm_fro_sqr();
        let g = self.det().norm();
        let disc = (f * f - 4.0 * g * g).max(0.0);
        (0.5 * (f + disc.sqrt())).sqrt()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.a
            .norm()
            .max(self.b.norm())
            .max(self.c.norm())
            .max(self.d.norm())
    }

    pub fn dist_max(&self, o: &Mat2) -> f64 {
        self.sub(o).max_abs_entry()
    }

    /// ‖A A* − I‖_max ≤ tol.
    pub fn is_unitary(&self, tol: f64) -> bool {
        let p = self.mul(&self.conj_transpose());
        p.dist_max(&Mat2::identity()) <= tol
    }
}

/// A 2×2 matrix stored as m·e^{log_scale} with ‖m‖_max kept below 1e100.
/// Products of thousands of transfer steps stay representable this way while
/// the matrix part keeps full relative precision.
#[derive(Clone, Copy, Debug)]
pub struct ScaledMat2 {
    pub m: Mat2,
    pub log_scale: f64,
}

const RENORM_THRESHOLD: f64 = 1e100;

impl ScaledMat2 {
    pub fn identity() -> Self {
        ScaledMat2 {
            m: Mat2::identity(),
            log_scale: 0.0,
        }
    }

    pub fn from_mat(m: Mat2) -> Self {
        let mut s = ScaledMat2 { m, log_scale: 0.0 };
        s.renorm();
        s
    }

    fn renorm(&mut self) {
        let mx = self.m.max_abs_entry();
        if mx > RENORM_THRESHOLD {
            let inv = 1.0 / mx;
            self.m = self.m.scale(c64(inv, 0.0));
            self.log_scale += mx.ln();
        }
    }

    pub fn mul(&self, o: &ScaledMat2) -> ScaledMat2 {
        let mut r = ScaledMat2 {
            m: self.m.mul(&o.m),
            log_scale: self.log_scale + o.log_scale,
        };
        r.renorm();
        r
    }

    pub fn mul_mat(&self, o: &Mat2) -> ScaledMat2 {
        let mut r = ScaledMat2 {
            m: self.m.mul(o),
            log_scale: self.log_scale,
        };
        r.renorm();
        r
    }

    pub fn premul_mat(&self, o: &Mat2) -> ScaledMat2 {
        let mut r = ScaledMat2 {
            m: o.mul(&self.m),
            log_scale: self.log_scale,
        };
        r.renorm();
        r
    }

    /// ln ‖·‖ of the represented matrix.
    pub fn log_norm_spec(&self) -> f64 {
        self.m.norm_spec().ln() + self.log_scale
    }

    /// The represented matrix when it fits in f64; infinities otherwise.
    pub fn to_mat(&self) -> Mat2 {
        let s = c64(self.log_scale.exp(), 0.0);
        self.m.scale(s)
    }
}
