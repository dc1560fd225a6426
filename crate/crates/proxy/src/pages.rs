//! Server-rendered pages. Every page works without scripting; when a UI
//! bundle is configured the staging page also loads it.

use std::fmt::Write as _;

use staggercast::policy::ChoiceKind;

use crate::session::StagingSession;

pub const CHOICE_PATH: &str = "/staggercast/choice";
pub const UI_SCRIPT: &str = "/staggercast/ui/app.js";

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// `HH:MM` local time for an absolute instant.
pub fn clock_time(t_s: f64, utc_offset_s: i64) -> String {
    let tod = (t_s as i64 + utc_offset_s).rem_euclid(86_400);
    format!("{:02}:{:02}", tod / 3600, tod % 3600 / 60)
}

/// Offered access times: the window start, then every half hour.
pub fn delay_slots((start, end): (f64, f64)) -> Vec<f64> {
    let mut slots = Vec::new();
    let mut t = start.ceil();
    while t < end && slots.len() < 48 {
        slots.push(t);
        t += 1800.0;
    }
    slots
}

fn page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\">\
         <meta name=\"viewport\" content=\"width=device-width, initial-scale=1\">\
         <title>{}</title></head><body>\n{body}\n</body></html>\n",
        escape(title)
    )
}

fn hidden(name: &str, value: &str) -> String {
    format!("<input type=\"hidden\" name=\"{name}\" value=\"{}\">", escape(value))
}

pub fn staging(session: &StagingSession, utc_offset_s: i64, with_ui: bool, now_s: f64) -> String {
    let offer = &session.offer;
    let token = hidden("token", &session.token);
    let mut b = String::new();
    let _ = write!(
        b,
        "<main id=\"staggercast\" data-token=\"{}\">\n<h1>Your network is busy right now</h1>\n\
         <section class=\"transparency\"><p>Your provider is asking whether this download can wait or be swapped \
         for something already stored nearby. Links are at <strong>{:.0}%</strong> of capacity.</p>\
         <p>Requested: <code>{}</code></p></section>\n\
         <section class=\"offer\" data-kind=\"{}\"><h2>Offer: {}</h2><p>{}</p>\
         <p>This offer expires in {} seconds.</p></section>\n",
        escape(&session.token),
        session.congestion * 100.0,
        escape(&session.original.url),
        offer.kind.name(),
        offer.kind.name(),
        escape(&offer.kind.describe(offer.magnitude)),
        (session.expires_s - now_s).max(0.0).round(),
    );
    for kind in &session.options {
        match kind {
            ChoiceKind::Continue => {
                let _ = writeln!(
                    b,
                    "<form method=\"post\" action=\"{CHOICE_PATH}\" class=\"choice-continue\">{token}{}\
                     <button type=\"submit\">Continue now</button></form>",
                    hidden("choice", "continue")
                );
            }
            ChoiceKind::Delay => {
                let Some(window) = session.delay_window else { continue };
                let _ = write!(
                    b,
                    "<form method=\"post\" action=\"{CHOICE_PATH}\" class=\"choice-delay\">{token}{}\
                     <label>Fetch it for me at <select name=\"new_access_s\">",
                    hidden("choice", "delay")
                );
                for t in delay_slots(window) {
                    let _ = write!(b, "<option value=\"{t}\">{}</option>", clock_time(t, utc_offset_s));
                }
                b.push_str("</select></label> <button type=\"submit\">Download later</button></form>\n");
            }
            ChoiceKind::ShiftContent => {
                b.push_str("<section class=\"alternatives\"><h2>Available now without waiting</h2>\n");
                for alt in &session.alternatives {
                    let _ = writeln!(
                        b,
                        "<form method=\"post\" action=\"{CHOICE_PATH}\" class=\"choice-shift\">{token}{}{}\
                         <button type=\"submit\">Watch {}</button> <span class=\"genre\">{}</span>{}</form>",
                        hidden("choice", "shift_content"),
                        hidden("alternative_content_id", &alt.content_id),
                        escape(if alt.title.is_empty() { &alt.content_id } else { &alt.title }),
                        escape(&alt.genre),
                        if alt.cached { " <span class=\"cached\">cached</span>" } else { "" },
                    );
                }
                b.push_str("</section>\n");
            }
        }
    }
    b.push_str("</main>");
    if with_ui {
        let _ = write!(b, "\n<script src=\"{UI_SCRIPT}\" defer></script>");
    }
    page("Network busy", &b)
}

pub fn scheduled(new_access_s: f64, utc_offset_s: i64, credits: u64, balance: u64) -> String {
    page(
        "Download scheduled",
        &format!(
            "<main><h1>Download scheduled</h1><p>We will fetch it at {} so it is ready when you are.</p>\
             <p>You earned {credits} credits. Balance: {balance}.</p></main>",
            clock_time(new_access_s, utc_offset_s)
        ),
    )
}

pub fn message(title: &str, text: &str) -> String {
    page(title, &format!("<main><h1>{}</h1><p>{}</p></main>", escape(title), escape(text)))
}
