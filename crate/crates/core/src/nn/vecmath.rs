/// Norm below which a vector is treated as degenerate.
pub const COSINE_EPS: f64 = 1e-8;

/// Cosine similarity with a flag for degenerate (near-zero-norm) inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// Set when either input norm is at most [`COSINE_EPS`]; `value` is then 0.
    pub degenerate: bool,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Cosine {
    debug_assert_eq!(a.len(), b.len());
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na <= COSINE_EPS || nb <= COSINE_EPS {
        return Cosine {
            value: 0.0,
            degenerate: true,
        };
    }
    Cosine {
        value: (dot(a, b) / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// ∂cos(a, b)/∂a. Zero for degenerate inputs.
pub fn cosine_similarity_grad(a: &[f64], b: &[f64]) -> Vec<f64> {
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na <= COSINE_EPS || nb <= COSINE_EPS {
        return vec![0.0; a.len()];
    }
    let c = dot(a, b) / (na * nb);
    a.iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - c * x / (na * na))
        .collect()
}
