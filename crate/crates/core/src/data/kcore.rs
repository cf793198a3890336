use std::collections::HashMap;

use super::Interaction;

/// Repeatedly drops interactions whose user or item has fewer than `k`
/// interactions until nothing changes. The surviving rows keep input order.
pub fn k_core_filter(interactions: &[Interaction], k: usize) -> Vec<Interaction> {
    let k = k.max(1);
    let mut alive = vec![true; interactions.len()];
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for (r, a) in interactions.iter().zip(&alive) {
            if *a {
                *users.entry(&r.user_id).or_default() += 1;
                *items.entry(&r.item_id).or_default() += 1;
            }
        }
        let mut changed = false;
        for (r, a) in interactions.iter().zip(alive.iter_mut()) {
            if *a && (users[r.user_id.as_str()] < k || items[r.item_id.as_str()] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    interactions
        .iter()
        .zip(&alive)
        .filter(|(_, a)| **a)
        .map(|(r, _)| r.clone())
        .collect()
}
