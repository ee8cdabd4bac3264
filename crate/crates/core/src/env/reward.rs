/// Fault situation from one relay's point of view at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    /// No fault active (before onset, after clearing, or no fault at all).
    Normal,
    /// Active fault inside the relay's primary region.
    MainRegion,
    /// Active fault in the downstream neighbor's region after that neighbor's
    /// breaker ignored its trip command.
    Backup,
    /// Any other active fault, including the backup region while the
    /// neighbor has not (yet) failed.
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionEffect {
    /// The relay issued its trip command this step.
    Tripped,
    Held,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Self::Normal, Self::MainRegion, Self::Backup, Self::Outside];
}

pub fn reward(condition: Condition, effect: ActionEffect) -> f64 {
    use ActionEffect::*;
    use Condition::*;
    match (condition, effect) {
        (Normal, Tripped) => -150.0,
        (Normal, Held) => 3.0,
        (MainRegion, Tripped) => 120.0,
        (MainRegion, Held) => -3.0,
        (Backup, Tripped) => 100.0,
        (Backup, Held) => -2.0,
        (Outside, Tripped) => -150.0,
        (Outside, Held) => 5.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let expected = [
            (Condition::Normal, -150.0, 3.0),
            (Condition::MainRegion, 120.0, -3.0),
            (Condition::Backup, 100.0, -2.0),
            (Condition::Outside, -150.0, 5.0),
        ];
        for (c, trip, hold) in expected {
            assert_eq!(reward(c, ActionEffect::Tripped), trip);
            assert_eq!(reward(c, ActionEffect::Held), hold);
        }
    }
}
