import init, { constellation_json, phase_tracking_json, ngmi_curve_json } from "./pkg/psqam_web.js";

const $ = (id) => document.getElementById(id);

function inputs() {
  const [order, shapedFor] = $("format").value.split(",").map(Number);
  return {
    order,
    shapedFor,
    linewidth: Number($("linewidth").value),
    snr: Number($("snr").value),
    k1: Number($("k1").value),
    k2: Number($("k2").value),
    period: Number($("period").value),
    payload: Number($("payload").value),
    seed: Number($("seed").value),
    pilotOnly: $("pilotonly").checked,
  };
}

function clear(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return ctx;
}

function drawScatter(points, weights, color) {
  const canvas = $("scatter");
  const ctx = clear(canvas);
  const half = canvas.width / 2;
  const scale = half / 1.8;
  ctx.strokeStyle = "#eee";
  ctx.beginPath();
  ctx.moveTo(half, 0); ctx.lineTo(half, canvas.height);
  ctx.moveTo(0, half); ctx.lineTo(canvas.width, half);
  ctx.stroke();
  const wmax = weights ? Math.max(...weights) : 1;
  ctx.fillStyle = color;
  points.forEach(([re, im], i) => {
    const r = weights ? 1 + 5 * Math.sqrt(weights[i] / wmax) : 1;
    ctx.beginPath();
    ctx.arc(half + re * scale, half - im * scale, r, 0, 2 * Math.PI);
    ctx.fill();
  });
}

function drawLines(xs, series, xlabel, ylabel) {
  const canvas = $("plot");
  const ctx = clear(canvas);
  const pad = 48;
  const all = series.flatMap((s) => s.y).filter(Number.isFinite);
  let [lo, hi] = [Math.min(...all), Math.max(...all)];
  if (hi - lo < 1e-9) { lo -= 0.5; hi += 0.5; }
  const [x0, x1] = [xs[0], xs[xs.length - 1]];
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (canvas.width - 2 * pad);
  const py = (y) => canvas.height - pad - ((y - lo) / (hi - lo)) * (canvas.height - 2 * pad);
  ctx.strokeStyle = "#888";
  ctx.strokeRect(pad, pad, canvas.width - 2 * pad, canvas.height - 2 * pad);
  ctx.fillStyle = "#333";
  ctx.fillText(xlabel, canvas.width / 2 - 20, canvas.height - 12);
  ctx.fillText(ylabel, 6, pad - 12);
  ctx.fillText(hi.toPrecision(3), 4, pad + 4);
  ctx.fillText(lo.toPrecision(3), 4, canvas.height - pad);
  ctx.fillText(String(x0), pad, canvas.height - pad + 14);
  ctx.fillText(String(x1), canvas.width - pad - 30, canvas.height - pad + 14);
  series.forEach(({ y, color, label }, k) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    xs.forEach((x, i) => (i ? ctx.lineTo(px(x), py(y[i])) : ctx.moveTo(px(x), py(y[i]))));
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(label, canvas.width - pad - 80, pad + 14 + 14 * k);
  });
}

function guarded(fn) {
  return () => {
    $("status").textContent = "";
    try {
      fn();
    } catch (e) {
      $("status").textContent = String(e.message ?? e);
    }
  };
}

function showConstellation() {
  const p = inputs();
  const c = JSON.parse(constellation_json(p.order, p.shapedFor));
  drawScatter(c.points, c.prior, "#1f5fa8");
  $("metrics").textContent = `H = ${c.entropy_bits.toFixed(3)} bit, lambda = ${c.shaping_factor.toFixed(5)}`;
}

function trackPhase() {
  const p = inputs();
  const t = JSON.parse(
    phase_tracking_json(p.order, p.shapedFor, p.linewidth, p.snr, p.k1, p.k2, p.period, p.pilotOnly, p.payload, p.seed),
  );
  drawScatter(t.scatter, null, "rgba(31, 95, 168, 0.35)");
  drawLines(t.n, [
    { y: t.phi, color: "#999", label: "phi" },
    { y: t.phi_hat, color: "#c0392b", label: "phi_hat" },
  ], "symbol", "rad");
  $("metrics").textContent =
    `${t.format}: GMI ${t.gmi.toFixed(3)}  NGMI ${t.ngmi.toFixed(4)}  AIR ${t.air.toFixed(3)}  SER ${t.decision_error_rate.toExponential(2)}`;
}

function ngmiCurve() {
  const p = inputs();
  const pts = JSON.parse(
    ngmi_curve_json(p.order, p.shapedFor, p.linewidth, p.k1, p.k2, p.period, p.pilotOnly, p.snr - 4, p.snr + 4, 17, p.payload, p.seed),
  );
  drawLines(pts.map((q) => q.snr_db), [
    { y: pts.map((q) => q.ngmi), color: "#1f5fa8", label: "NGMI" },
    { y: pts.map(() => 0.857), color: "#bbb", label: "0.857" },
  ], "SNR (dB)", "NGMI");
  $("metrics").textContent = pts.map((q) => `${q.snr_db.toFixed(1)}:${q.ngmi.toFixed(3)}`).join("  ");
}

await init();
$("show").addEventListener("click", guarded(showConstellation));
$("track").addEventListener("click", guarded(trackPhase));
$("curve").addEventListener("click", guarded(ngmiCurve));
guarded(showConstellation)();
