//! Non-leap calendar year starting on Monday, January 1.

pub const DAYS_IN_MONTH: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
pub const DAYS_PER_YEAR: usize = 365;

pub fn steps_per_day(dt_hours: f64) -> usize {
    (24.0 / dt_hours).round() as usize
}

/// Zero-based day of year of a step index (wraps after one year).
pub fn day_of_year(step: usize, dt_hours: f64) -> usize {
    (step / steps_per_day(dt_hours)) % DAYS_PER_YEAR
}

/// `(month 1..=12, day 1..=31)` of a zero-based day of year.
pub fn month_day(doy: usize) -> (usize, usize) {
    let mut d = doy % DAYS_PER_YEAR;
    for (m, &len) in DAYS_IN_MONTH.iter().enumerate() {
        if d < len {
            return (m + 1, d + 1);
        }
        d -= len;
    }
    unreachable!()
}

/// Zero-based day of year of a calendar date.
pub fn doy(month: usize, day: usize) -> usize {
    assert!((1..=12).contains(&month) && day >= 1 && day <= DAYS_IN_MONTH[month - 1]);
    DAYS_IN_MONTH[..month - 1].iter().sum::<usize>() + day - 1
}

/// 0 = Monday.
pub fn weekday(doy: usize) -> usize {
    doy % 7
}
