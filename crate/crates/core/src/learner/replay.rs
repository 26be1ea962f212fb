use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::AgentType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Protagonist,
    Opponent,
}

/// Which kind of policy produced a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// A gradient-trained ensemble member.
    Learner,
    /// A neuroevolution mutant.
    Mutant,
    /// A hand-written opponent.
    Scripted,
    /// The evaluation opponent.
    Evaluator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemberTag {
    pub role: Role,
    /// Opponent type of the episode (hidden from the protagonist).
    pub agent_type: AgentType,
    pub member: Option<usize>,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub input: Vec<f64>,
    pub action: usize,
    /// Noiseless policy distribution at `input`.
    pub action_probs: Vec<f64>,
    pub reward: f64,
    pub next_input: Vec<f64>,
    pub done: bool,
    pub tag: MemberTag,
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 200_000;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: Vec::with_capacity(capacity.min(4096)), capacity, inserted: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertions since creation, including overwritten ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.items[slot] = t;
        }
        self.inserted += 1;
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.items[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        self.sample_indices(n, rng).into_iter().map(|i| &self.items[i]).collect()
    }
}

/// Replay buffer shared by concurrent rollout workers. Each `append` is
/// applied atomically; readers see a consistent buffer for the duration of
/// `read`.
#[derive(Debug, Clone)]
pub struct SharedReplayBuffer {
    inner: Arc<Mutex<ReplayBuffer>>,
}

impl SharedReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { inner: Arc::new(Mutex::new(ReplayBuffer::new(capacity))) }
    }

    pub fn append(&self, ts: Vec<Transition>) {
        self.inner.lock().expect("replay lock poisoned").extend(ts);
    }

    pub fn read<T>(&self, f: impl FnOnce(&ReplayBuffer) -> T) -> T {
        f(&self.inner.lock().expect("replay lock poisoned"))
    }

    pub fn len(&self) -> usize {
        self.read(|b| b.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The opponent-side experience shared by every ensemble member, mutant and
/// the distiller, partitioned by opponent type.
#[derive(Debug, Clone)]
pub struct SharedExperience {
    by_type: [ReplayBuffer; 2],
}

impl SharedExperience {
    pub fn new(capacity: usize) -> Self {
        Self { by_type: [ReplayBuffer::new(capacity), ReplayBuffer::new(capacity)] }
    }

    pub fn push(&mut self, t: Transition) {
        self.by_type[t.tag.agent_type.index()].push(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    pub fn for_type(&self, agent: AgentType) -> &ReplayBuffer {
        &self.by_type[agent.index()]
    }

    pub fn len(&self) -> usize {
        self.by_type.iter().map(ReplayBuffer::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of stored transitions per source.
    pub fn census(&self) -> std::collections::BTreeMap<String, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for t in self.by_type.iter().flat_map(ReplayBuffer::iter) {
            *counts.entry(format!("{:?}", t.tag.source).to_lowercase()).or_insert(0) += 1;
        }
        counts
    }
}

#[cfg(test)]
pub(crate) fn dummy_transition_for_tests(i: usize) -> Transition {
    Transition {
        input: vec![i as f64],
        action: 0,
        action_probs: vec![1.0],
        reward: i as f64,
        next_input: vec![i as f64 + 1.0],
        done: false,
        tag: MemberTag { role: Role::Opponent, agent_type: AgentType::Enemy, member: Some(0), source: Source::Learner },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dummy_transition_for_tests as dummy_transition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(dummy_transition(i));
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.inserted(), 5);
        let mut rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_uniform() {
        let n = 50;
        let mut buf = ReplayBuffer::new(n);
        buf.extend((0..n).map(dummy_transition));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let mut hist = vec![0usize; n];
        for i in buf.sample_indices(draws, &mut rng) {
            hist[i] += 1;
        }
        // Pearson statistic of a flat multinomial: mean n - 1, variance 2(n - 1)
        let expected = draws as f64 / n as f64;
        let chi2: f64 = hist.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
        let dof = (n - 1) as f64;
        assert!((chi2 - dof).abs() <= 3.0 * (2.0 * dof).sqrt(), "chi2 {chi2}");
    }

    #[test]
    fn concurrent_appends() {
        let shared = SharedReplayBuffer::new(10_000);
        let handles: Vec<_> = (0..4)
            .map(|w| {
                let s = shared.clone();
                std::thread::spawn(move || {
                    for k in 0..100 {
                        s.append((0..5).map(|j| dummy_transition(w * 1000 + k * 5 + j)).collect());
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(shared.len(), 2000);
        // every batch stays contiguous
        shared.read(|b| {
            for chunk in b.iter().collect::<Vec<_>>().chunks(5) {
                let first = chunk[0].reward;
                for (j, t) in chunk.iter().enumerate() {
                    assert_eq!(t.reward, first + j as f64);
                }
            }
        });
    }
}
