//! Answer-likelihood reward over per-token logits that are linear in the image.

use crate::error::{check_dim, Error, Result};
use crate::math::{log_sum_exp, softmax, Matrix, Vector};

use super::Scored;

/// Longest answer sequence accepted.
pub const MAX_ANSWER_TOKENS: usize = 70;

#[derive(Clone, Debug, PartialEq)]
pub struct VqaAnswerSpec {
    answer: Vec<usize>,
    vocab_size: usize,
    /// One `V x P` map per answer position.
    logit_maps: Vec<Matrix>,
    biases: Vec<Vector>,
    margin: f64,
    margin_weight: f64,
}

impl VqaAnswerSpec {
    pub fn new(
        answer: Vec<usize>,
        vocab_size: usize,
        logit_maps: Vec<Matrix>,
        biases: Vec<Vector>,
        margin: f64,
        margin_weight: f64,
    ) -> Result<Self> {
        let len = answer.len();
        if len == 0 || len > MAX_ANSWER_TOKENS {
            return Err(Error::invalid(
                "vqa answer",
                format!("length {len} outside [1, {MAX_ANSWER_TOKENS}]"),
            ));
        }
        if vocab_size < 2 {
            return Err(Error::invalid("vqa vocabulary", "needs at least two tokens"));
        }
        if let Some(bad) = answer.iter().find(|a| **a >= vocab_size) {
            return Err(Error::invalid(
                "vqa answer",
                format!("token {bad} outside vocabulary of size {vocab_size}"),
            ));
        }
        check_dim("vqa logit maps", len, logit_maps.len())?;
        check_dim("vqa biases", len, biases.len())?;
        let image_dim = logit_maps[0].ncols();
        for (u, b) in logit_maps.iter().zip(&biases) {
            check_dim("vqa logit map rows", vocab_size, u.nrows())?;
            check_dim("vqa logit map columns", image_dim, u.ncols())?;
            check_dim("vqa bias", vocab_size, b.len())?;
        }
        if !(margin >= 0.0 && margin_weight >= 0.0) {
            return Err(Error::invalid("vqa margin", "margin and margin weight must be >= 0"));
        }
        Ok(Self {
            answer,
            vocab_size,
            logit_maps,
            biases,
            margin,
            margin_weight,
        })
    }

    pub fn answer(&self) -> &[usize] {
        &self.answer
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn image_dim(&self) -> usize {
        self.logit_maps[0].ncols()
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn margin_weight(&self) -> f64 {
        self.margin_weight
    }

    pub fn logits(&self, image: &Vector, position: usize) -> Vector {
        &self.logit_maps[position] * image + &self.biases[position]
    }

    /// Signed distance of every position from its hinge kink.
    pub fn hinge_gaps(&self, image: &Vector) -> Vec<f64> {
        (0..self.answer.len())
            .map(|t| {
                let l = self.logits(image, t);
                let (_, rival) = best_rival(&l, self.answer[t]);
                self.margin - l[self.answer[t]] + rival
            })
            .collect()
    }

    /// `R = -(1/T) sum_t [CE_t + lambda_m hinge_t]` with `CE_t = -log p_t[a_t]`.
    pub fn evaluate(&self, image: &Vector) -> Result<Scored> {
        check_dim("vqa image", self.image_dim(), image.len())?;
        let t_len = self.answer.len() as f64;
        let mut value = 0.0;
        let mut grad = Vector::zeros(image.len());
        for (t, &target) in self.answer.iter().enumerate() {
            let l = self.logits(image, t);
            let ce = log_sum_exp(l.as_slice()) - l[target];
            let (rival_idx, rival) = best_rival(&l, target);
            let hinge = (self.margin - l[target] + rival).max(0.0);
            value -= (ce + self.margin_weight * hinge) / t_len;

            // dR/dl_t = -(1/T) [(p - e_a) + lambda_m 1[hinge > 0] (e_rival - e_a)]
            let mut dl = Vector::from_vec(softmax(l.as_slice()));
            dl[target] -= 1.0;
            if hinge > 0.0 {
                dl[target] -= self.margin_weight;
                dl[rival_idx] += self.margin_weight;
            }
            grad -= self.logit_maps[t].tr_mul(&dl) / t_len;
        }
        Ok(Scored {
            value,
            grad,
            degenerate: false,
        })
    }
}

fn best_rival(logits: &Vector, target: usize) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (u, &l) in logits.iter().enumerate() {
        if u != target && l > best.1 {
            best = (u, l);
        }
    }
    best
}
