use crate::domain::{Bucket, VoteRecord};
use crate::stance::classify_response;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("majority vote needs at least one candidate")]
pub struct NoCandidates;

/// Votes over stance buckets.
///
/// The strictly largest bucket wins. On a tie the negation bucket wins if it
/// is among the leaders, otherwise the leader bucket whose first candidate was
/// generated earliest. The winner is the first-generated candidate of the
/// winning bucket, and `tie_flag` records whether any tie occurred.
pub fn majority_vote(candidates: Vec<String>) -> Result<(String, VoteRecord), NoCandidates> {
    if candidates.is_empty() {
        return Err(NoCandidates);
    }
    let buckets: Vec<Bucket> = candidates.iter().map(|c| classify_response(c)).collect();
    let count = |b: Bucket| buckets.iter().filter(|x| **x == b).count();
    let best = [Bucket::Negation, Bucket::Affirmation, Bucket::Other].into_iter().map(count).max().unwrap_or(0);
    // Leaders in order of first appearance.
    let mut leaders: Vec<Bucket> = Vec::new();
    for &b in &buckets {
        if count(b) == best && !leaders.contains(&b) {
            leaders.push(b);
        }
    }
    let tie_flag = leaders.len() > 1;
    let winner_bucket = if leaders.contains(&Bucket::Negation) { Bucket::Negation } else { leaders[0] };
    let winner_index = buckets.iter().position(|b| *b == winner_bucket).expect("winner bucket is present");
    let winner = candidates[winner_index].clone();
    Ok((
        winner,
        VoteRecord { m: candidates.len(), candidates, buckets, winner_bucket, winner_index, tie_flag },
    ))
}
