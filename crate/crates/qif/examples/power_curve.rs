//! Power of the level-0.05 chi-squared test as a function of the
//! non-centrality parameter, for 1 and 2 constraint degrees of freedom.

use qif::*;

fn main() -> Result<()> {
    println!("{:>6} {:>10} {:>10}", "ncp", "df=1", "df=2");
    for i in 0..=20 {
        let ncp = i as f64;
        let p1 = theoretical_power(&PowerSpec { df: 1, ncp, alpha: 0.05 })?;
        let p2 = theoretical_power(&PowerSpec { df: 2, ncp, alpha: 0.05 })?;
        println!("{ncp:>6.1} {p1:>10.4} {p2:>10.4}");
    }
    Ok(())
}
