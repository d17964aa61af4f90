import init, { batch_trace, failure_curves, cache_hit_rates } from "./pkg/predserve_demo.js";

const COLORS = ["#999", "#bbb", "#777", "#555", "#333", "#d62728", "#1f77b4"];

const num = (id) => Number(document.getElementById(id).value);

function rows(flat, stride) {
  const out = [];
  for (let i = 0; i < flat.length; i += stride) out.push(Array.from(flat.subarray(i, i + stride)));
  return out;
}

// series: [{ points: [[x, y], ...], color }]
function plot(canvas, series, { xlabel, ylabel, ymax }) {
  const dpr = window.devicePixelRatio || 1;
  const w = canvas.clientWidth, h = canvas.clientHeight;
  canvas.width = w * dpr;
  canvas.height = h * dpr;
  const g = canvas.getContext("2d");
  g.scale(dpr, dpr);
  g.clearRect(0, 0, w, h);
  const pad = 40;
  const all = series.flatMap((s) => s.points);
  const xmax = Math.max(...all.map((p) => p[0]), 1e-9);
  const top = ymax ?? Math.max(...all.map((p) => p[1]), 1e-9) * 1.05;
  const sx = (x) => pad + (x / xmax) * (w - 2 * pad);
  const sy = (y) => h - pad - (y / top) * (h - 2 * pad);
  g.strokeStyle = "#000";
  g.beginPath();
  g.moveTo(pad, pad);
  g.lineTo(pad, h - pad);
  g.lineTo(w - pad, h - pad);
  g.stroke();
  g.fillStyle = "#000";
  g.fillText(xlabel, w / 2, h - 10);
  g.fillText(ylabel, 4, pad - 10);
  g.fillText(top.toPrecision(3), 4, pad);
  g.fillText(xmax.toPrecision(3), w - pad - 20, h - pad + 14);
  for (const s of series) {
    g.strokeStyle = s.color;
    g.lineWidth = s.width ?? 1.5;
    g.beginPath();
    s.points.forEach(([x, y], i) => (i ? g.lineTo(sx(x), sy(y)) : g.moveTo(sx(x), sy(y))));
    g.stroke();
  }
}

function runBatch() {
  const slo = num("b-slo");
  const strategy = document.getElementById("b-strategy").value;
  const r = rows(batch_trace(num("b-fixed"), num("b-per"), slo, strategy, 10, 1n), 4);
  const over = r.filter((b) => b[2] > slo).length;
  const served = r.reduce((n, b) => n + b[1], 0);
  document.getElementById("b-stat").textContent =
    `${r.length} batches, ${(served / 10).toFixed(0)} queries/s, ${over} over the SLO`;
  plot(
    document.getElementById("b-canvas"),
    [
      { points: r.map((b) => [b[0], b[3]]), color: COLORS[6] },
      { points: r.map((b) => [b[0], b[1]]), color: COLORS[5], width: 0.5 },
    ],
    { xlabel: "time (ms): max batch (blue), batch size (red)", ylabel: "items" },
  );
}

function runFailure() {
  const r = rows(failure_curves(num("f-eta"), num("f-rate"), BigInt(num("f-seed"))), 8);
  const names = ["model 0", "model 1", "model 2", "model 3", "model 4", "Exp3", "Exp4"];
  const series = names.map((_, k) => ({ points: r.map((p) => [p[0], p[k + 1]]), color: COLORS[k], width: k >= 5 ? 2.5 : 1 }));
  plot(document.getElementById("f-canvas"), series, { xlabel: "queries", ylabel: "cumulative error", ymax: 1 });
  document.getElementById("f-legend").innerHTML = names
    .map((n, k) => `<span style="color:${COLORS[k]}">${n} ${r[r.length - 1][k + 1].toFixed(3)}</span>`)
    .join("");
}

function runCache() {
  const universe = num("c-universe");
  const caps = new Uint32Array([1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000].filter((c) => c <= universe));
  const r = rows(cache_hit_rates(num("c-exp"), BigInt(universe), BigInt(num("c-queries")), caps, 1n), 2);
  plot(document.getElementById("c-canvas"), [{ points: r, color: COLORS[6], width: 2 }], {
    xlabel: "capacity (entries)",
    ylabel: "hit rate",
    ymax: 1,
  });
}

function guard(f) {
  return () => {
    try {
      f();
    } catch (e) {
      alert(e.message ?? e);
    }
  };
}

await init();
for (const [id, f] of [["b-run", runBatch], ["f-run", runFailure], ["c-run", runCache]]) {
  document.getElementById(id).addEventListener("click", guard(f));
  guard(f)();
}
