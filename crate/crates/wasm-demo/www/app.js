import init, { simulate_day, sample_population_summary, rewrite_preview } from "./pkg/staggercast_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function guard(fn) {
  return () => {
    $("error").textContent = "";
    try {
      fn();
    } catch (e) {
      $("error").textContent = String(e.message || e);
    }
  };
}

function draw(result) {
  const canvas = $("chart");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const top = Math.max(result.capacity, ...result.baseline, ...result.dsm) * 1.05;
  const x = (i) => (i / (result.baseline.length - 1)) * (w - 40) + 30;
  const y = (v) => h - 20 - (v / top) * (h - 30);

  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  for (let hour = 0; hour <= 24; hour += 3) {
    const i = (hour * 3600) / result.bin_s;
    const clock = (hour + result.clock_offset_s / 3600) % 24;
    ctx.fillText(`${String(clock).padStart(2, "0")}:00`, x(Math.min(i, result.baseline.length - 1)) - 14, h - 5);
  }

  const line = (series, colour) => {
    ctx.strokeStyle = colour;
    ctx.beginPath();
    series.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
  };
  ctx.setLineDash([4, 4]);
  line([result.capacity, result.capacity], "#36c");
  ctx.setLineDash([]);
  line(result.baseline, "#999");
  line(result.dsm, "#c33");
}

$("run").onclick = guard(() => {
  const result = JSON.parse(simulate_day(num("pop"), num("seed"), num("shift"), $("rules").checked));
  draw(result);
  const fmt = (v) => (v == null ? "-" : v.toFixed(3));
  $("stats").textContent = [
    `requests            ${result.requests}`,
    `peak/mean baseline  ${fmt(result.baseline_peak_to_mean)}`,
    `peak/mean managed   ${fmt(result.dsm_peak_to_mean)}`,
    `offers accepted     ${result.accepted} of ${result.offers}`,
    `forced deferral     ${result.forced_deferred_bytes == null ? "-" : (result.forced_deferred_bytes / 1e9).toFixed(1) + " GB"}`,
  ].join("\n");
});

$("sample").onclick = guard(() => {
  const summary = JSON.parse(sample_population_summary(num("n"), num("pseed")));
  $("population").textContent = Object.entries(summary)
    .map(([k, v]) => `${k.padEnd(28)} ${k === "n" ? v : (v * 100).toFixed(1) + "%"}`)
    .join("\n");
});

$("rewrite").onclick = guard(() => {
  $("preview").textContent = rewrite_preview($("html").value, $("cached").value);
});

await init();
$("run").click();
