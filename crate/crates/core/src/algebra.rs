//! Finite-dimensional real algebras given by structure constants.
//!
//! An algebra of dimension `d` is the tensor `π` with `e_i × e_j = Σ_k π[i][j][k] e_k`.
//! No associativity, commutativity or identity is assumed.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Upper bound on the algebra dimension.
pub const MAX_DIM: usize = 16;

/// Tolerance used when deciding identities and (anti)commutation in
/// [`AlgebraTensor::properties`].
pub const PROPERTY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraTensor {
    dim: usize,
    pi: Vec<f64>,
    name: Option<String>,
}

/// Coordinates of an algebra element with respect to the ordered basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgVec(pub Vec<f64>);

impl AlgVec {
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        AlgVec(v)
    }

    pub fn zeros(dim: usize) -> Self {
        AlgVec(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for AlgVec {
    fn from(v: Vec<f64>) -> Self {
        AlgVec(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinAlgebra {
    Real,
    Quaternion,
    Coquaternion,
    Tessarine,
    HyperbolicQuaternion,
}

impl BuiltinAlgebra {
    pub const ALL: [BuiltinAlgebra; 5] = [
        BuiltinAlgebra::Real,
        BuiltinAlgebra::Quaternion,
        BuiltinAlgebra::Coquaternion,
        BuiltinAlgebra::Tessarine,
        BuiltinAlgebra::HyperbolicQuaternion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinAlgebra::Real => "real",
            BuiltinAlgebra::Quaternion => "quaternion",
            BuiltinAlgebra::Coquaternion => "coquaternion",
            BuiltinAlgebra::Tessarine => "tessarine",
            BuiltinAlgebra::HyperbolicQuaternion => "hyperbolic_quaternion",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let n = name.to_ascii_lowercase().replace('-', "_");
        Self::ALL.into_iter().find(|k| k.name() == n)
    }

    /// Products `e_i × e_j` for `i, j ∈ {1,2,3}` as `(sign, basis index)`.
    /// Row and column of the identity `e_0` are implied.
    fn table(self) -> [[(f64, usize); 3]; 3] {
        use BuiltinAlgebra::*;
        match self {
            Real => unreachable!("real algebra has no imaginary units"),
            Quaternion => [
                [(-1.0, 0), (1.0, 3), (-1.0, 2)],
                [(-1.0, 3), (-1.0, 0), (1.0, 1)],
                [(1.0, 2), (-1.0, 1), (-1.0, 0)],
            ],
            Coquaternion => [
                [(-1.0, 0), (1.0, 3), (-1.0, 2)],
                [(-1.0, 3), (1.0, 0), (-1.0, 1)],
                [(1.0, 2), (1.0, 1), (1.0, 0)],
            ],
            Tessarine => [
                [(-1.0, 0), (1.0, 3), (-1.0, 2)],
                [(1.0, 3), (1.0, 0), (1.0, 1)],
                [(-1.0, 2), (1.0, 1), (-1.0, 0)],
            ],
            HyperbolicQuaternion => [
                [(1.0, 0), (1.0, 3), (-1.0, 2)],
                [(-1.0, 3), (1.0, 0), (1.0, 1)],
                [(1.0, 2), (-1.0, 1), (1.0, 0)],
            ],
        }
    }
}

impl fmt::Display for BuiltinAlgebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Failed commutativity check: `e_i × e_j ≠ e_j × e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommutatorWitness {
    pub i: usize,
    pub j: usize,
    pub ij: AlgVec,
    pub ji: AlgVec,
}

/// Failed associativity check: `(e_i × e_j) × e_k ≠ e_i × (e_j × e_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociatorWitness {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub left: AlgVec,
    pub right: AlgVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraProperties {
    /// Basis index of a two-sided identity, if a basis element is one.
    pub identity: Option<usize>,
    pub commutative: Option<CommutatorWitness>,
    pub associative: Option<AssociatorWitness>,
}

impl AlgebraProperties {
    pub fn is_commutative(&self) -> bool {
        self.commutative.is_none()
    }

    pub fn is_associative(&self) -> bool {
        self.associative.is_none()
    }
}

#[derive(Serialize, Deserialize)]
struct AlgebraFile {
    dim: usize,
    pi: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

impl AlgebraTensor {
    /// `pi` is row-major `d×d×d`: `pi[(i·d + j)·d + k]`.
    pub fn new(dim: usize, pi: Vec<f64>, name: Option<String>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(invalid!("algebra dimension {dim} outside 1..={MAX_DIM}"));
        }
        if pi.len() != dim * dim * dim {
            return Err(shape_err!(
                "structure tensor of a {dim}-dimensional algebra needs {} entries, got {}",
                dim * dim * dim,
                pi.len()
            ));
        }
        if let Some(p) = pi.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("structure constant {p}")));
        }
        Ok(AlgebraTensor { dim, pi, name })
    }

    pub fn builtin(kind: BuiltinAlgebra) -> Self {
        let name = Some(kind.name().to_string());
        if kind == BuiltinAlgebra::Real {
            return AlgebraTensor {
                dim: 1,
                pi: vec![1.0],
                name,
            };
        }
        let d = 4;
        let mut pi = vec![0.0; d * d * d];
        let at = |i: usize, j: usize, k: usize| (i * d + j) * d + k;
        for j in 0..d {
            pi[at(0, j, j)] = 1.0;
            pi[at(j, 0, j)] = 1.0;
        }
        for (r, row) in kind.table().iter().enumerate() {
            for (c, &(sign, k)) in row.iter().enumerate() {
                pi[at(r + 1, c + 1, k)] = sign;
            }
        }
        AlgebraTensor { dim: d, pi, name }
    }

    /// Random structure constants uniform in `[-1, 1]`.
    pub fn random(dim: usize, rng: &mut impl Rng) -> Self {
        let pi = (0..dim * dim * dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        AlgebraTensor::new(dim, pi, Some(format!("random{dim}"))).expect("valid random algebra")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn pi(&self, i: usize, j: usize, k: usize) -> f64 {
        self.pi[(i * self.dim + j) * self.dim + k]
    }

    pub fn structure_constants(&self) -> &[f64] {
        &self.pi
    }

    fn check_len(&self, v: &AlgVec) -> Result<()> {
        if v.dim() != self.dim {
            return Err(invalid!(
                "vector of length {} in a {}-dimensional algebra",
                v.dim(),
                self.dim
            ));
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.dim {
            return Err(Error::IndexOutOfRange {
                index: i,
                dim: self.dim,
            });
        }
        Ok(())
    }

    /// `z_k = Σ_i Σ_j ξ_i η_j π_ijk`, evaluated as the literal double sum.
    pub fn multiply(&self, x: &AlgVec, y: &AlgVec) -> Result<AlgVec> {
        self.check_len(x)?;
        self.check_len(y)?;
        let mut z = vec![0.0; self.dim];
        multiply_into(&self.pi, self.dim, &x.0, &y.0, &mut z);
        Ok(AlgVec(z))
    }

    /// `P_i:ᵀ`: entry `(k, j)` is `π_ijk`, so column `j` is `φ(e_i × e_j)`.
    pub fn slice_transpose(&self, i: usize) -> Result<Tensor<f64>> {
        self.check_index(i)?;
        let d = self.dim;
        Ok(Tensor::from_fn(&[d, d], |p| self.pi(i, p % d, p / d)))
    }

    /// Matrix of `x ↦ x × e_j`: entry `(k, i)` is `π_ijk`.
    pub fn right_slice(&self, j: usize) -> Result<Tensor<f64>> {
        self.check_index(j)?;
        let d = self.dim;
        Ok(Tensor::from_fn(&[d, d], |p| self.pi(p % d, j, p / d)))
    }

    /// `M_L(x) = Σ_i ξ_i P_i:ᵀ`, so that `φ(x × y) = M_L(x) φ(y)`.
    pub fn left_mul_matrix(&self, x: &AlgVec) -> Result<Tensor<f64>> {
        self.check_len(x)?;
        let d = self.dim;
        let mut m = Tensor::zeros(&[d, d]);
        for (i, &xi) in x.0.iter().enumerate() {
            m.add_assign(&self.slice_transpose(i)?.scale(xi));
        }
        Ok(m)
    }

    /// `M_R(y) = Σ_j η_j R_j`, so that `φ(x × y) = M_R(y) φ(x)`.
    pub fn right_mul_matrix(&self, y: &AlgVec) -> Result<Tensor<f64>> {
        self.check_len(y)?;
        let d = self.dim;
        let mut m = Tensor::zeros(&[d, d]);
        for (j, &yj) in y.0.iter().enumerate() {
            m.add_assign(&self.right_slice(j)?.scale(yj));
        }
        Ok(m)
    }

    fn basis_product(&self, i: usize, j: usize) -> AlgVec {
        let d = self.dim;
        AlgVec(self.pi[(i * d + j) * d..(i * d + j + 1) * d].to_vec())
    }

    /// Exhaustive basis checks for a two-sided identity, commutativity and
    /// associativity.
    pub fn properties(&self) -> AlgebraProperties {
        let d = self.dim;
        let close = |a: &AlgVec, b: &AlgVec| {
            a.0.iter().zip(&b.0).all(|(x, y)| (x - y).abs() <= PROPERTY_TOL)
        };
        let identity = (0..d).find(|&e| {
            (0..d).all(|j| {
                let ej = AlgVec::basis(d, j);
                close(&self.basis_product(e, j), &ej) && close(&self.basis_product(j, e), &ej)
            })
        });

        let mut commutative = None;
        'comm: for i in 0..d {
            for j in i + 1..d {
                let (ij, ji) = (self.basis_product(i, j), self.basis_product(j, i));
                if !close(&ij, &ji) {
                    commutative = Some(CommutatorWitness { i, j, ij, ji });
                    break 'comm;
                }
            }
        }

        let mut associative = None;
        'assoc: for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let left = self
                        .multiply(&self.basis_product(i, j), &AlgVec::basis(d, k))
                        .expect("basis dims");
                    let right = self
                        .multiply(&AlgVec::basis(d, i), &self.basis_product(j, k))
                        .expect("basis dims");
                    if !close(&left, &right) {
                        associative = Some(AssociatorWitness {
                            i,
                            j,
                            k,
                            left,
                            right,
                        });
                        break 'assoc;
                    }
                }
            }
        }

        AlgebraProperties {
            identity,
            commutative,
            associative,
        }
    }

    /// Resolves a built-in algebra name or a path to an algebra JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(kind) = BuiltinAlgebra::from_name(name_or_path) {
            return Ok(Self::builtin(kind));
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::read_json(path);
        }
        Err(invalid!(
            "unknown algebra '{name_or_path}' (expected one of real, quaternion, coquaternion, \
             tessarine, hyperbolic_quaternion, or a JSON file)"
        ))
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let d = self.dim;
        let pi = (0..d)
            .map(|i| (0..d).map(|j| self.basis_product(i, j).0).collect())
            .collect();
        serde_json::to_value(AlgebraFile {
            dim: d,
            pi,
            name: self.name.clone(),
        })
        .expect("serializable")
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let file: AlgebraFile = serde_json::from_value(value)?;
        let d = file.dim;
        if file.pi.len() != d || file.pi.iter().any(|r| r.len() != d || r.iter().any(|f| f.len() != d)) {
            return Err(shape_err!("\"pi\" must be a nested {d}×{d}×{d} array"));
        }
        let flat = file.pi.into_iter().flatten().flatten().collect();
        AlgebraTensor::new(d, flat, file.name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_value(serde_json::from_str(text)?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Structure constants converted to `T`.
    pub(crate) fn pi_as<T: Real>(&self) -> Vec<T> {
        self.pi.iter().map(|&v| T::of_f64(v)).collect()
    }
}

/// `out = x × y` over raw coordinates; `out` is overwritten.
pub(crate) fn multiply_into<T: Real>(pi: &[T], d: usize, x: &[T], y: &[T], out: &mut [T]) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for i in 0..d {
        for j in 0..d {
            let w = x[i] * y[j];
            let fiber = &pi[(i * d + j) * d..(i * d + j + 1) * d];
            for (o, &p) in out.iter_mut().zip(fiber) {
                *o = *o + w * p;
            }
        }
    }
}

/// Kronecker product over the last two axes: `a` is a matrix or a stack of
/// matrices (e.g. an `f_h×f_w×C×K` filter bank), `b` a matrix. Block
/// `(p, q)` of each result matrix is `a[.., p, q]·b`.
pub fn kron<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() < 2 {
        return Err(shape_err!("kron needs at least 2 axes on the left operand"));
    }
    let [r, s] = b.dims2()?;
    let nd = a.ndim();
    let (p, q) = (a.shape()[nd - 2], a.shape()[nd - 1]);
    let lead: usize = a.shape()[..nd - 2].iter().product();
    let mut out = Vec::with_capacity(a.len() * r * s);
    for l in 0..lead {
        let am = &a.data()[l * p * q..(l + 1) * p * q];
        for pi in 0..p {
            for ri in 0..r {
                for qi in 0..q {
                    let av = am[pi * q + qi];
                    out.extend(b.data()[ri * s..(ri + 1) * s].iter().map(|&bv| av * bv));
                }
            }
        }
    }
    let mut shape = a.shape()[..nd - 2].to_vec();
    shape.extend([p * r, q * s]);
    Ok(Tensor::from_parts(shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q() -> AlgebraTensor {
        AlgebraTensor::builtin(BuiltinAlgebra::Quaternion)
    }

    fn e(i: usize) -> AlgVec {
        AlgVec::basis(4, i)
    }

    #[test]
    fn quaternion_table_entries() {
        let q = q();
        assert_eq!(q.multiply(&e(1), &e(2)).unwrap(), e(3));
        assert_eq!(q.pi(1, 2, 3), 1.0);
        for k in [0, 1, 2] {
            assert_eq!(q.pi(1, 2, k), 0.0);
        }
    }

    #[test]
    fn hyperbolic_unit_squares_to_one() {
        let y = AlgebraTensor::builtin(BuiltinAlgebra::HyperbolicQuaternion);
        assert_eq!(y.pi(1, 1, 0), 1.0);
        assert_eq!(y.multiply(&e(1), &e(1)).unwrap(), e(0));
    }

    #[test]
    fn identity_is_bilateral_for_builtins() {
        for kind in BuiltinAlgebra::ALL.into_iter().skip(1) {
            let a = AlgebraTensor::builtin(kind);
            for j in 0..4 {
                assert_eq!(a.multiply(&e(0), &e(j)).unwrap(), e(j), "{kind}");
                assert_eq!(a.multiply(&e(j), &e(0)).unwrap(), e(j), "{kind}");
            }
        }
    }

    #[test]
    fn multiply_examples() {
        let q = q();
        let x = AlgVec(vec![1.0, 1.0, 0.0, 0.0]);
        let y = AlgVec(vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(q.multiply(&x, &y).unwrap().0, vec![1.0, 1.0, 1.0, 1.0]);
        let y = AlgVec(vec![0.3, -1.2, 2.0, 0.5]);
        assert_eq!(q.multiply(&e(0), &y).unwrap(), y);
        assert!(matches!(
            q.multiply(&AlgVec(vec![1.0]), &y),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn real_algebra_is_scalar_multiplication() {
        let r = AlgebraTensor::builtin(BuiltinAlgebra::Real);
        assert_eq!(r.dim(), 1);
        let z = r.multiply(&AlgVec(vec![-2.5]), &AlgVec(vec![4.0])).unwrap();
        assert_eq!(z.0, vec![-10.0]);
    }

    #[test]
    fn left_mul_matrix_of_e1() {
        let m = q().left_mul_matrix(&e(1)).unwrap();
        let expected = [
            [0.0, -1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, -1.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        for (r, row) in expected.iter().enumerate() {
            for (c, &want) in row.iter().enumerate() {
                assert_eq!(m.get(&[r, c]), want);
            }
        }
        assert_eq!(q().slice_transpose(1).unwrap(), m);
        assert_eq!(q().left_mul_matrix(&e(0)).unwrap(), Tensor::identity(4));
        assert_eq!(q().slice_transpose(0).unwrap(), Tensor::identity(4));
    }

    #[test]
    fn tessarine_slice_column() {
        let t = AlgebraTensor::builtin(BuiltinAlgebra::Tessarine);
        let s = t.slice_transpose(2).unwrap();
        let col: Vec<f64> = (0..4).map(|k| s.get(&[k, 2])).collect();
        assert_eq!(col, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            t.slice_transpose(4),
            Err(Error::IndexOutOfRange { index: 4, dim: 4 })
        ));
    }

    #[test]
    fn properties_of_builtins() {
        let p = q().properties();
        assert_eq!(p.identity, Some(0));
        assert!(p.is_associative());
        let w = p.commutative.unwrap();
        assert_eq!((w.i, w.j), (1, 2));
        assert_eq!(w.ij, e(3));
        assert_eq!(w.ji.0, vec![0.0, 0.0, 0.0, -1.0]);

        let t = AlgebraTensor::builtin(BuiltinAlgebra::Tessarine).properties();
        assert!(t.is_commutative() && t.is_associative());
        assert_eq!(t.identity, Some(0));

        let c = AlgebraTensor::builtin(BuiltinAlgebra::Coquaternion).properties();
        assert!(!c.is_commutative() && c.is_associative());

        let y = AlgebraTensor::builtin(BuiltinAlgebra::HyperbolicQuaternion).properties();
        assert!(!y.is_commutative());
        let w = y.associative.unwrap();
        // (e1 e1) e2 = e2, e1 (e1 e2) = -e2
        assert_eq!((w.i, w.j, w.k), (1, 1, 2));
        assert_eq!(w.left, e(2));
        assert_eq!(w.right.0, vec![0.0, 0.0, -1.0, 0.0]);

        let r = AlgebraTensor::builtin(BuiltinAlgebra::Real).properties();
        assert_eq!(r.identity, Some(0));
        assert!(r.is_commutative() && r.is_associative());
    }

    #[test]
    fn new_validates_shape_and_values() {
        assert!(AlgebraTensor::new(0, vec![], None).is_err());
        assert!(AlgebraTensor::new(2, vec![0.0; 7], None).is_err());
        assert!(AlgebraTensor::new(17, vec![0.0; 17 * 17 * 17], None).is_err());
        let mut pi = vec![0.0; 8];
        pi[3] = f64::INFINITY;
        assert!(matches!(AlgebraTensor::new(2, pi, None), Err(Error::NonFinite(_))));
    }

    #[test]
    fn json_roundtrip_and_resolve() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = AlgebraTensor::random(3, &mut rng);
        let back = AlgebraTensor::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
        let v: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(v["dim"], 3);
        assert_eq!(v["pi"][1][2][0].as_f64().unwrap(), a.pi(1, 2, 0));

        assert_eq!(AlgebraTensor::resolve("quaternion").unwrap(), q());
        assert!(AlgebraTensor::resolve("octonion").is_err());
        assert!(AlgebraTensor::from_json(r#"{"dim":2,"pi":[[[1,0]],[[0,1]]]}"#).is_err());
    }

    #[test]
    fn kron_examples() {
        let i2 = Tensor::<f64>::identity(2);
        let b = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let k = kron(&i2, &b).unwrap();
        assert_eq!(k.shape(), &[4, 4]);
        assert_eq!(
            k.data(),
            &[1., 2., 0., 0., 3., 4., 0., 0., 0., 0., 1., 2., 0., 0., 3., 4.]
        );
        let two = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        assert_eq!(kron(&two, &b).unwrap(), b.scale(2.0));
        let swap = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let k = kron(&swap, &b).unwrap();
        assert_eq!(
            k.data(),
            &[0., 0., 1., 2., 0., 0., 3., 4., 1., 2., 0., 0., 3., 4., 0., 0.]
        );
        // stack of matrices: each is expanded independently
        let bank = Tensor::from_fn(&[2, 1, 1, 1], |i| (i + 1) as f64);
        let k = kron(&bank, &b).unwrap();
        assert_eq!(k.shape(), &[2, 1, 2, 2]);
        assert_eq!(k.data(), &[1., 2., 3., 4., 2., 4., 6., 8.]);
    }

    fn algvec(d: usize) -> impl Strategy<Value = AlgVec> {
        prop::collection::vec(-2.0f64..2.0, d).prop_map(AlgVec)
    }

    proptest! {
        #[test]
        fn matrix_bridge(seed in any::<u64>(), d in 1usize..6, x in algvec(5), y in algvec(5)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = AlgebraTensor::random(d, &mut rng);
            let x = AlgVec(x.0[..d].to_vec());
            let y = AlgVec(y.0[..d].to_vec());
            let z = p.multiply(&x, &y).unwrap();
            let yv = Tensor::new(vec![d, 1], y.0.clone()).unwrap();
            let lz = crate::tensor::matmul(&p.left_mul_matrix(&x).unwrap(), &yv).unwrap();
            let xv = Tensor::new(vec![d, 1], x.0.clone()).unwrap();
            let rz = crate::tensor::matmul(&p.right_mul_matrix(&y).unwrap(), &xv).unwrap();
            for k in 0..d {
                prop_assert!((lz.data()[k] - z.0[k]).abs() <= 1e-12 * (1.0 + z.0[k].abs()));
                prop_assert!((rz.data()[k] - z.0[k]).abs() <= 1e-12 * (1.0 + z.0[k].abs()));
            }
        }

        #[test]
        fn bilinear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0,
                    x in algvec(3), x2 in algvec(3), y in algvec(3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = AlgebraTensor::random(3, &mut rng);
            let comb = AlgVec(x.0.iter().zip(&x2.0).map(|(u, v)| a * u + b * v).collect());
            let lhs = p.multiply(&comb, &y).unwrap();
            let (m1, m2) = (p.multiply(&x, &y).unwrap(), p.multiply(&x2, &y).unwrap());
            for k in 0..3 {
                prop_assert!((lhs.0[k] - (a * m1.0[k] + b * m2.0[k])).abs() < 1e-10);
            }
            let rhs = p.multiply(&y, &comb).unwrap();
            let (m1, m2) = (p.multiply(&y, &x).unwrap(), p.multiply(&y, &x2).unwrap());
            for k in 0..3 {
                prop_assert!((rhs.0[k] - (a * m1.0[k] + b * m2.0[k])).abs() < 1e-10);
            }
        }

        #[test]
        fn quaternion_norm_is_multiplicative(x in algvec(4), y in algvec(4)) {
            let z = q().multiply(&x, &y).unwrap();
            prop_assert!((z.norm() - x.norm() * y.norm()).abs() <= 1e-10);
        }
    }
}
