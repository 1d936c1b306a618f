use vti_tensor::nn::LstmState;
use vti_tensor::{Real, Tape, Tensor, Var};

use super::{Network, Visual};
use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h1: Var,
    pub c1: Var,
    pub h2: Var,
    pub c2: Var,
}

impl DecoderState {
    pub fn select<T: Real>(&self, tape: &mut Tape<'_, T>, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            h1: tape.gather_rows(self.h1, rows)?,
            c1: tape.gather_rows(self.c1, rows)?,
            h2: tape.gather_rows(self.h2, rows)?,
            c2: tape.gather_rows(self.c2, rows)?,
        })
    }

    fn prefix<T: Real>(&self, tape: &mut Tape<'_, T>, n: usize) -> Result<Self> {
        Ok(Self {
            h1: tape.slice_rows(self.h1, 0, n)?,
            c1: tape.slice_rows(self.c1, 0, n)?,
            h2: tape.slice_rows(self.h2, 0, n)?,
            c2: tape.slice_rows(self.c2, 0, n)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// `rows × vocab`, before softmax.
    pub logits: Var,
    /// `rows × k` attention over the image's local features.
    pub alpha: Var,
    pub state: DecoderState,
}

/// One teacher-forced sentence: `input[t]` is fed to predict `target[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    /// Image index within the [`Visual`] batch.
    pub group: usize,
    /// Row of the topic matrix conditioning this sentence.
    pub z_row: usize,
    pub input: Vec<usize>,
    pub target: Vec<usize>,
    /// Loss weight of each token.
    pub weight: f64,
}

impl Sequence {
    /// `[BOS] words` → `words [EOS]`.
    pub fn for_words(group: usize, z_row: usize, words: &[usize], weight: f64) -> Self {
        let mut input = vec![crate::data::BOS];
        input.extend_from_slice(words);
        let mut target = words.to_vec();
        target.push(crate::data::EOS);
        Self {
            group,
            z_row,
            input,
            target,
            weight,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TeacherForced {
    /// Logits of every emitted token, step-major.
    pub logits: Var,
    /// `(sequence, step)` of each logits row.
    pub rows: Vec<(usize, usize)>,
    /// Attention of each step, rows in the same order as `rows`.
    pub alphas: Vec<Var>,
}

impl Network {
    /// `h1 = 0, c1 = z_to_cell(z), h2 = 0, c2 = 0`.
    pub fn init_decoder<T: Real>(&self, tape: &mut Tape<'_, T>, z: Var) -> Result<DecoderState> {
        let rows = tape.shape(z)[0];
        let d_h = self.config.d_h;
        let c1 = self.z_to_cell.forward(tape, z)?;
        let zero = tape.constant(Tensor::zeros(&[rows, d_h]));
        Ok(DecoderState {
            h1: zero,
            c1,
            h2: zero,
            c2: zero,
        })
    }

    /// `alpha = softmax_j(w_a · tanh(W_v v_j + W_h h1))`, `v_a = Σ_j alpha_j v_j`,
    /// with row `r` attending over image `groups[r]`.
    pub fn visual_attention<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        features: Var,
        keys: Var,
        h1: Var,
        groups: &[usize],
    ) -> Result<(Var, Var)> {
        let k = self.config.k();
        let n = groups.len();
        if tape.shape(h1)[0] != n {
            return Err(contract(format!(
                "visual_attention: {} rows for {n} groups",
                tape.shape(h1)[0]
            )));
        }
        let wh = tape.param(self.att_h);
        let query = tape.matmul(h1, wh)?;
        let feat_rows: Vec<usize> = groups.iter().flat_map(|&g| (0..k).map(move |j| g * k + j)).collect();
        let rep_rows: Vec<usize> = (0..n).flat_map(|r| std::iter::repeat_n(r, k)).collect();
        let kk = tape.gather_rows(keys, &feat_rows)?;
        let qq = tape.gather_rows(query, &rep_rows)?;
        let s = tape.add(kk, qq)?;
        let s = tape.tanh(s);
        let wa = tape.param(self.att_w);
        let scores = tape.matmul(s, wa)?;
        let scores = tape.reshape(scores, &[n, k])?;
        let alpha = tape.softmax(scores, 1)?;
        let v_a = tape.attend(alpha, features, groups)?;
        Ok((alpha, v_a))
    }

    /// Feeds `tokens` (one per row) through both LSTMs and the output
    /// projection. `z` is required when the topic is re-injected each step.
    pub fn decode_step<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        visual: &Visual,
        tokens: &[usize],
        state: DecoderState,
        groups: &[usize],
        z: Option<Var>,
    ) -> Result<StepOutput> {
        let mut x = self.embed.embed(tape, tokens, false)?;
        if self.config.z_every_step {
            let z = z.ok_or_else(|| contract("decode_step: per-step topic input missing"))?;
            x = tape.concat(&[x, z], 1)?;
        }
        let s1 = self.lstm1.step(
            tape,
            x,
            LstmState {
                h: state.h1,
                c: state.c1,
            },
        )?;
        let (alpha, v_a) = self.visual_attention(tape, visual.features, visual.keys, s1.h, groups)?;
        let x2 = tape.concat(&[v_a, s1.h], 1)?;
        let s2 = self.lstm2.step(
            tape,
            x2,
            LstmState {
                h: state.h2,
                c: state.c2,
            },
        )?;
        let logits = self.out_proj.forward(tape, s2.h)?;
        Ok(StepOutput {
            logits,
            alpha,
            state: DecoderState {
                h1: s1.h,
                c1: s1.c,
                h2: s2.h,
                c2: s2.c,
            },
        })
    }

    /// Decodes all sequences in one packed batch, longest first, so the
    /// live rows at every step form a prefix.
    pub fn teacher_forced<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        visual: &Visual,
        z: Var,
        seqs: &[Sequence],
    ) -> Result<TeacherForced> {
        if seqs.is_empty() {
            return Err(contract("teacher_forced: no sequences"));
        }
        if let Some(s) = seqs
            .iter()
            .find(|s| s.input.is_empty() || s.input.len() != s.target.len())
        {
            return Err(contract(format!(
                "teacher_forced: {} inputs vs {} targets",
                s.input.len(),
                s.target.len()
            )));
        }
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by(|&a, &b| seqs[b].input.len().cmp(&seqs[a].input.len()));
        let z_rows: Vec<usize> = order.iter().map(|&i| seqs[i].z_row).collect();
        let groups: Vec<usize> = order.iter().map(|&i| seqs[i].group).collect();
        let mut zs = tape.gather_rows(z, &z_rows)?;
        let mut state = self.init_decoder(tape, zs)?;
        let mut live = order.len();
        let mut logits = Vec::new();
        let mut rows = Vec::new();
        let mut alphas = Vec::new();
        for t in 0..seqs[order[0]].input.len() {
            let n = order.iter().take_while(|&&i| seqs[i].input.len() > t).count();
            if n < live {
                state = state.prefix(tape, n)?;
                if self.config.z_every_step {
                    zs = tape.slice_rows(zs, 0, n)?;
                }
                live = n;
            }
            let tokens: Vec<usize> = order[..n].iter().map(|&i| seqs[i].input[t]).collect();
            let out = self.decode_step(tape, visual, &tokens, state, &groups[..n], Some(zs))?;
            state = out.state;
            logits.push(out.logits);
            alphas.push(out.alpha);
            rows.extend(order[..n].iter().map(|&i| (i, t)));
        }
        let logits = if logits.len() == 1 {
            logits[0]
        } else {
            tape.concat(&logits, 0)?
        };
        Ok(TeacherForced { logits, rows, alphas })
    }

    /// Mean token log-probability of each sequence's targets.
    pub fn sequence_log_likelihoods<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        visual: &Visual,
        z: Var,
        seqs: &[Sequence],
    ) -> Result<Vec<f64>> {
        let tf = self.teacher_forced(tape, visual, z, seqs)?;
        let v = self.config.vocab;
        let data = tape.data(tf.logits);
        let mut total = vec![0.0; seqs.len()];
        for (r, &(s, t)) in tf.rows.iter().enumerate() {
            total[s] += log_softmax_at(&data[r * v..(r + 1) * v], seqs[s].target[t]);
        }
        Ok(total
            .into_iter()
            .zip(seqs)
            .map(|(lp, s)| lp / s.target.len() as f64)
            .collect())
    }
}

pub(crate) fn log_softmax_at<T: Real>(row: &[T], target: usize) -> f64 {
    let mx = row.iter().map(|x| x.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|x| (x.to_f64_lossy() - mx).exp()).sum();
    row[target].to_f64_lossy() - mx - z.ln()
}
