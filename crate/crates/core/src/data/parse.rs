use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::data::{Interaction, InteractionLog};
use crate::error::{Error, Result};

/// Parses a MovieLens `u.data`-style file: `user<TAB>item<TAB>rating<TAB>timestamp`
/// per line, ASCII integers. Users and items are re-indexed densely in
/// ascending order of their original numeric id.
pub fn parse_movielens(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let num = |s: &str, what: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| err(format!("{what} `{s}` is not a non-negative integer")))
        };
        let user = num(fields[0], "user")?;
        let item = num(fields[1], "item")?;
        let rating = parse_rating(fields[2]).map_err(err)?;
        let ts = num(fields[3], "timestamp")?;
        raw.push((user, item, rating, ts));
    }
    if raw.is_empty() {
        return Err(Error::Dataset(format!("{} contains no interactions", path.display())));
    }

    let users = sorted_index(raw.iter().map(|r| r.0));
    let items = sorted_index(raw.iter().map(|r| r.1));
    let interactions = raw
        .iter()
        .map(|&(u, i, r, t)| Interaction::new(users[&u], items[&i], r, t))
        .collect();
    let mut log = InteractionLog::from_interactions(interactions, users.len(), items.len())?;
    log.user_ids = ids_in_order(&users);
    log.item_ids = ids_in_order(&items);
    Ok(log)
}

/// Parses an Amazon ratings CSV: `user,item,rating,timestamp` with string
/// ids. Ids are re-indexed densely in first-seen order. Ratings may be
/// written as `4` or `4.0`.
pub fn parse_amazon(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut users: HashMap<String, usize> = HashMap::new();
    let mut items: HashMap<String, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut interactions = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 comma-separated fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(err("empty user or item id".into()));
        }
        let rating = parse_rating(fields[2]).map_err(err)?;
        let ts = fields[3]
            .parse::<u64>()
            .map_err(|_| err(format!("timestamp `{}` is not a non-negative integer", fields[3])))?;
        let u = *users.entry(fields[0].to_string()).or_insert_with(|| {
            user_ids.push(fields[0].to_string());
            user_ids.len() - 1
        });
        let i = *items.entry(fields[1].to_string()).or_insert_with(|| {
            item_ids.push(fields[1].to_string());
            item_ids.len() - 1
        });
        interactions.push(Interaction::new(u, i, rating, ts));
    }
    if interactions.is_empty() {
        return Err(Error::Dataset(format!("{} contains no interactions", path.display())));
    }
    let mut log = InteractionLog::from_interactions(interactions, user_ids.len(), item_ids.len())?;
    log.user_ids = user_ids;
    log.item_ids = item_ids;
    Ok(log)
}

fn parse_rating(s: &str) -> std::result::Result<u8, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("rating `{s}` is not a number"))?;
    if v.fract() != 0.0 || !(1.0..=5.0).contains(&v) {
        return Err(format!("rating `{s}` is not an integer in 1..=5"));
    }
    Ok(v as u8)
}

fn sorted_index(ids: impl Iterator<Item = u64>) -> HashMap<u64, usize> {
    let mut v: Vec<u64> = ids.collect();
    v.sort_unstable();
    v.dedup();
    v.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

fn ids_in_order(map: &HashMap<u64, usize>) -> Vec<String> {
    let mut v = vec![String::new(); map.len()];
    for (id, &i) in map {
        v[i] = id.to_string();
    }
    v
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn movielens_reindexes_and_sorts() {
        let f = write("196\t242\t3\t881250949\n186\t302\t3\t891717742\n196\t302\t5\t881250000\n");
        let log = parse_movielens(f.path()).unwrap();
        assert_eq!((log.n_users, log.n_items, log.n_interactions()), (2, 2, 3));
        // users sorted by original id: 186 -> 0, 196 -> 1
        assert_eq!(log.user_ids, vec!["186", "196"]);
        let u196 = &log.per_user[1];
        assert_eq!(u196[0].timestamp, 881250000);
        assert_eq!(u196[1].timestamp, 881250949);
        assert_eq!(log.item_ids[u196[1].item], "242");
        assert_eq!(u196[1].rating, 3);
    }

    #[test]
    fn movielens_rejects_short_line() {
        let f = write("1\t2\t3\t4\n1\t2\t3\n");
        match parse_movielens(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_missing_files() {
        let f = write("\n");
        assert!(matches!(parse_movielens(f.path()), Err(Error::Dataset(_))));
        assert!(matches!(parse_movielens("/definitely/not/here"), Err(Error::Io { .. })));
        assert!(matches!(parse_amazon(f.path()), Err(Error::Dataset(_))));
    }

    #[test]
    fn amazon_first_seen_ids_and_duplicates() {
        let f = write("A2X,B01,5.0,100\nA1Y,B02,2.0,50\nA2X,B01,5.0,100\nA2X,B02,4,90\n");
        let log = parse_amazon(f.path()).unwrap();
        assert_eq!(log.user_ids, vec!["A2X", "A1Y"]);
        assert_eq!(log.item_ids, vec!["B01", "B02"]);
        assert_eq!(log.n_interactions(), 4);
        let a2x = &log.per_user[0];
        assert_eq!(a2x.iter().map(|i| i.timestamp).collect::<Vec<_>>(), vec![90, 100, 100]);
    }

    #[test]
    fn amazon_reports_bad_rating_line() {
        let f = write("u,i,5,1\nu,i,4.5,2\n");
        match parse_amazon(f.path()) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("rating"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
