use std::collections::HashSet;

use super::{CheckIn, Dataset};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_USER_CHECKINS: usize = 10;
pub const DEFAULT_MIN_POI_USERS: usize = 10;

/// Removes users with fewer than `min_user_checkins` check-ins and POIs
/// visited by fewer than `min_poi_users` distinct users, repeating until
/// neither rule removes anything. Ids are re-densified on the survivors.
pub fn filter_activity(
    ds: &Dataset,
    min_user_checkins: usize,
    min_poi_users: usize,
) -> Result<Dataset> {
    if min_user_checkins == 0 || min_poi_users == 0 {
        return Err(Error::Config("activity thresholds must be >= 1".into()));
    }
    let mut alive_user = vec![true; ds.num_users()];
    let mut alive_poi = vec![true; ds.num_pois()];
    loop {
        let mut user_counts = vec![0usize; ds.num_users()];
        let mut poi_users: Vec<HashSet<usize>> = vec![HashSet::new(); ds.num_pois()];
        for (u, seq) in ds.sequences.iter().enumerate() {
            if !alive_user[u] {
                continue;
            }
            for v in seq.iter().filter(|v| alive_poi[v.poi]) {
                user_counts[u] += 1;
                poi_users[v.poi].insert(u);
            }
        }
        let mut changed = false;
        for (u, alive) in alive_user.iter_mut().enumerate() {
            if *alive && user_counts[u] < min_user_checkins {
                *alive = false;
                changed = true;
            }
        }
        for (p, alive) in alive_poi.iter_mut().enumerate() {
            if *alive && poi_users[p].len() < min_poi_users {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let checkins: Vec<CheckIn> = ds
        .sequences
        .iter()
        .enumerate()
        .filter(|(u, _)| alive_user[*u])
        .flat_map(|(u, seq)| {
            seq.iter().filter(|v| alive_poi[v.poi]).map(move |v| CheckIn {
                user_id: ds.users[u].user_id.clone(),
                poi_id: ds.pois[v.poi].poi_id.clone(),
                timestamp: v.timestamp,
            })
        })
        .collect();
    if checkins.is_empty() {
        return Err(Error::Data("dataset vanished under filter".into()));
    }
    let pois = ds
        .pois
        .iter()
        .enumerate()
        .filter(|(p, _)| alive_poi[*p])
        .map(|(_, p)| p.clone())
        .collect();
    Dataset::from_records(pois, &ds.user_meta_map(), &checkins)
}
