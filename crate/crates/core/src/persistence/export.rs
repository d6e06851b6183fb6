use std::fmt::Write;

use crate::model::{MeetingKind, MeetingMinutes};

/// Renders minutes as a Markdown document with the sections Agenda,
/// Participants, one block per round (guidance, contributions, critique,
/// synthesis, follow-ups) and Final Summary.
pub fn render_minutes(minutes: &MeetingMinutes) -> String {
    let mut out = String::new();
    let title = match minutes.kind {
        MeetingKind::Team => "Meeting Minutes",
        MeetingKind::Warmup => "Warm-up Minutes",
    };
    let _ = writeln!(out, "# {title}\n");
    let _ = writeln!(out, "- Meeting: {}", minutes.meeting_id);
    let _ = writeln!(out, "- Project: {}", minutes.project_id);
    let _ = writeln!(out, "- Rounds: {}\n", minutes.per_round.len());

    let _ = writeln!(out, "## Agenda\n\n{}\n", minutes.agenda.trim_end());

    out.push_str("## Participants\n\n");
    for name in &minutes.participants {
        let _ = writeln!(out, "- {name}");
    }
    out.push('\n');

    for round in &minutes.per_round {
        let _ = writeln!(out, "## Round {}\n", round.round);
        let _ = writeln!(out, "### Guidance\n\n{}\n", round.guidance.trim_end());
        out.push_str("### Contributions\n\n");
        for turn in &round.expert_turns {
            let _ = writeln!(out, "#### {}\n\n{}\n", turn.speaker, turn.content.trim_end());
        }
        let _ = writeln!(out, "### Critique\n\n{}\n", round.critique.trim_end());
        let _ = writeln!(out, "### Round {} Synthesis\n\n{}\n", round.round, round.synthesis.trim_end());
        let _ = writeln!(out, "### Round {} Follow-ups\n", round.round);
        if round.follow_up_questions.is_empty() {
            out.push_str("(none)\n");
        }
        for (i, q) in round.follow_up_questions.iter().enumerate() {
            let _ = writeln!(out, "{}. {q}", i + 1);
        }
        out.push('\n');
    }

    let _ = writeln!(out, "## Final Summary\n\n{}", minutes.final_summary.trim_end());
    out
}
