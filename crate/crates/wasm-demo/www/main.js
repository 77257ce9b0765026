import init, { smooth_demo, flms_demo, flmf_surface } from "./pkg/funflow_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function frame(canvas, xs, ys) {
  const ctx = canvas.getContext("2d");
  const pad = 36, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const flat = ys.flat().filter(Number.isFinite);
  let [y0, y1] = [Math.min(...flat), Math.max(...flat)];
  if (y0 === y1) { y0 -= 1; y1 += 1; }
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#ccc";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#666";
  ctx.font = "11px sans-serif";
  ctx.fillText(y1.toPrecision(3), 2, pad + 4);
  ctx.fillText(y0.toPrecision(3), 2, pad + h);
  ctx.fillText(String(x0), pad, pad + h + 14);
  ctx.fillText(String(x1), pad + w - 20, pad + h + 14);
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * w;
  const py = (y) => pad + h - ((y - y0) / (y1 - y0)) * h;
  if (y0 < 0 && y1 > 0) {
    ctx.strokeStyle = "#eee";
    ctx.beginPath(); ctx.moveTo(pad, py(0)); ctx.lineTo(pad + w, py(0)); ctx.stroke();
  }
  return { ctx, px, py };
}

function line({ ctx, px, py }, xs, ys, color, width = 2) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(px(x), py(ys[i])) : ctx.moveTo(px(x), py(ys[i]))));
  ctx.stroke();
  ctx.lineWidth = 1;
}

function showError(stat, canvas, message) {
  stat.textContent = "error: " + message;
  canvas.getContext("2d").clearRect(0, 0, canvas.width, canvas.height);
}

function drawSmooth() {
  const r = JSON.parse(smooth_demo(num("sm-seed"), num("sm-noise"), num("sm-lambda"), num("sm-k")));
  const canvas = $("sm-plot");
  if (r.error) return showError($("sm-stat"), canvas, r.error);
  const f = frame(canvas, r.times, [r.observed, r.truth, r.fitted]);
  f.ctx.fillStyle = "#aaa";
  r.times.forEach((t, i) => f.ctx.fillRect(f.px(t) - 1.5, f.py(r.observed[i]) - 1.5, 3, 3));
  line(f, r.times, r.truth, "#2a7");
  line(f, r.times, r.fitted, "#c33");
  $("sm-stat").textContent =
    `λ = 10^${num("sm-lambda")}, K = ${num("sm-k")}, effective df ${r.effective_df.toFixed(2)}, RMSE vs truth ${r.rmse_vs_truth.toFixed(4)}`;
}

function drawScalar() {
  const r = JSON.parse(flms_demo(num("fs-seed"), num("fs-n"), num("fs-lambda")));
  const canvas = $("fs-plot");
  if (r.error) return showError($("fs-stat"), canvas, r.error);
  const f = frame(canvas, r.times, [r.lower, r.upper, r.truth]);
  f.ctx.fillStyle = "rgba(230,150,170,0.35)";
  f.ctx.beginPath();
  r.times.forEach((t, i) => (i ? f.ctx.lineTo(f.px(t), f.py(r.upper[i])) : f.ctx.moveTo(f.px(t), f.py(r.upper[i]))));
  for (let i = r.times.length - 1; i >= 0; i--) f.ctx.lineTo(f.px(r.times[i]), f.py(r.lower[i]));
  f.ctx.fill();
  line(f, r.times, r.truth, "#2a7");
  line(f, r.times, r.estimate, "#c33");
  $("fs-stat").textContent = `R² ${r.r2.toFixed(3)}, leave-one-out MSE ${r.loocv.toPrecision(4)}`;
}

function heat(canvas, s, t, values, lo, hi) {
  const ctx = canvas.getContext("2d");
  const cw = canvas.width / s.length, ch = canvas.height / t.length;
  const span = Math.max(Math.abs(lo), Math.abs(hi)) || 1;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < s.length; i++) {
    for (let j = 0; j < t.length; j++) {
      const v = values[i * t.length + j] / span;
      const a = Math.min(1, Math.abs(v));
      ctx.fillStyle = v >= 0 ? `rgba(200,40,40,${a})` : `rgba(40,80,200,${a})`;
      ctx.fillRect(i * cw, canvas.height - (j + 1) * ch, cw + 0.5, ch + 0.5);
    }
  }
  ctx.strokeStyle = "#999";
  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  const x = (v) => ((v - s[0]) / (s[s.length - 1] - s[0])) * canvas.width;
  const y = (v) => canvas.height - ((v - t[0]) / (t[t.length - 1] - t[0])) * canvas.height;
  ctx.moveTo(x(t[0]), y(t[0]));
  ctx.lineTo(x(t[t.length - 1]), y(t[t.length - 1]));
  ctx.stroke();
  ctx.setLineDash([]);
}

function drawSurface() {
  const r = JSON.parse(flmf_surface(num("ff-seed"), num("ff-n"), num("ff-ls"), num("ff-lt")));
  if (r.error) return showError($("ff-stat"), $("ff-est"), r.error);
  const all = r.estimate.concat(r.truth);
  const lo = Math.min(...all), hi = Math.max(...all);
  heat($("ff-est"), r.s, r.t, r.estimate, lo, hi);
  heat($("ff-true"), r.s, r.t, r.truth, lo, hi);
  const err = Math.sqrt(r.estimate.reduce((acc, v, i) => acc + (v - r.truth[i]) ** 2, 0) / r.truth.length);
  $("ff-stat").textContent = `colour scale ±${Math.max(Math.abs(lo), Math.abs(hi)).toPrecision(3)}, RMS error ${err.toPrecision(3)}; dashed line marks s = t`;
}

function bind(ids, draw) {
  ids.forEach((id) => $(id).addEventListener("input", draw));
  draw();
}

await init();
bind(["sm-seed", "sm-noise", "sm-lambda", "sm-k"], drawSmooth);
bind(["fs-seed", "fs-n", "fs-lambda"], drawScalar);
bind(["ff-seed", "ff-n", "ff-ls", "ff-lt"], drawSurface);
