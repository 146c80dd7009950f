//! Brute-force BLEU (add-one smoothing above unigrams, closest reference
//! length) and ROUGE-L (beta 1.2, best reference) written without the library.

fn grams(s: &[&str], k: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + k <= s.len() {
        out.push(s[i..i + k].iter().map(|w| w.to_string()).collect());
        i += 1;
    }
    out
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

pub fn oracle_bleu(c: &[&str], refs: &[Vec<&str>], n: usize) -> f64 {
    let mut precisions = Vec::new();
    for k in 1..=n {
        let cg = grams(c, k);
        let mut seen: Vec<Vec<String>> = Vec::new();
        let mut clipped = 0usize;
        for g in &cg {
            if seen.contains(g) {
                continue;
            }
            seen.push(g.clone());
            let mut best = 0;
            for r in refs {
                best = best.max(count(&grams(r, k), g));
            }
            clipped += count(&cg, g).min(best);
        }
        let total = cg.len();
        let p = if k == 1 {
            if total == 0 {
                0.0
            } else {
                clipped as f64 / total as f64
            }
        } else {
            (clipped as f64 + 1.0) / (total as f64 + 1.0)
        };
        precisions.push(p);
    }
    if precisions.iter().any(|&p| p == 0.0) {
        return 0.0;
    }
    let geo = precisions.iter().product::<f64>().powf(1.0 / n as f64);
    let mut r = refs[0].len();
    for x in refs {
        let d = (x.len() as i64 - c.len() as i64).abs();
        let best = (r as i64 - c.len() as i64).abs();
        if d < best || (d == best && x.len() < r) {
            r = x.len();
        }
    }
    let bp = if c.len() < r {
        (1.0 - r as f64 / c.len() as f64).exp()
    } else {
        1.0
    };
    bp * geo
}

pub fn oracle_lcs(a: &[&str], b: &[&str]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            t[i][j] = if a[i] == b[j] {
                1 + t[i + 1][j + 1]
            } else {
                t[i + 1][j].max(t[i][j + 1])
            };
        }
    }
    t[0][0]
}

pub fn oracle_rouge(c: &[&str], refs: &[Vec<&str>]) -> f64 {
    let mut best: f64 = 0.0;
    for r in refs {
        let l = oracle_lcs(c, r) as f64;
        if l > 0.0 {
            let p = l / c.len() as f64;
            let rc = l / r.len() as f64;
            let b = 1.2f64 * 1.2;
            best = best.max((1.0 + b) * p * rc / (rc + b * p));
        }
    }
    best
}
