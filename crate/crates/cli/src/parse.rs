//! Parsers for list and matrix flags: commas separate columns, semicolons
//! separate rows.

pub fn float_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| format!("not a number: {x:?}"))
        })
        .collect()
}

pub fn usize_list(s: &str) -> Result<Vec<usize>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| format!("not a nonnegative integer: {x:?}"))
        })
        .collect()
}

pub fn matrix(s: &str) -> Result<Vec<Vec<f64>>, String> {
    let rows: Vec<Vec<f64>> = s.split(';').map(float_list).collect::<Result<_, _>>()?;
    let k = rows.len();
    if rows.iter().any(|r| r.len() != k) {
        return Err(format!(
            "matrix must be square, got {k} rows of lengths {:?}",
            rows.iter().map(Vec::len).collect::<Vec<_>>()
        ));
    }
    Ok(rows)
}
