use crate::allocator::Matching;

/// OMA LTE-D style allocation: one Tx per subchannel and one subchannel per
/// Tx. When Tx users outnumber subchannels the served window advances by
/// `n_sc` users every period, so everyone is served round-robin and the
/// rest wait.
pub fn oma_baseline_allocate(n_tx: usize, n_sc: usize, period: u64) -> Matching {
    let mut m = Matching::empty(n_tx, n_sc, 1, 1);
    if n_tx == 0 {
        return m;
    }
    let offset = (period as usize % n_tx) * n_sc % n_tx;
    for k in 0..n_tx.min(n_sc) {
        m.set((offset + k) % n_tx, k, true);
    }
    m
}
