import init, { spectrumExplorer, localizationSteps, mseCurves } from "./pkg/mvpure_demo.js";

const $ = (id) => document.getElementById(id);

function fields(id) {
  const out = {};
  for (const el of $(id).querySelectorAll("input[name], select[name]")) {
    if (el.name === "snr") {
      out.snr = el.value.split(/[,\s]+/).filter(Boolean).map(Number);
    } else if (el.type === "number") {
      out[el.name] = Number(el.value);
    } else {
      out[el.name] = el.value;
    }
  }
  return out;
}

function call(fn, params, outId) {
  try {
    return JSON.parse(fn(JSON.stringify(params)));
  } catch (e) {
    const out = $(outId);
    out.className = "out err";
    out.textContent = String(e.message ?? e);
    return null;
  }
}

function setText(id, text) {
  const el = $(id);
  el.className = "out";
  el.textContent = text;
}

function canvas(id) {
  const c = $(id);
  const dpr = window.devicePixelRatio || 1;
  c.width = c.clientWidth * dpr;
  c.height = c.clientHeight * dpr;
  const ctx = c.getContext("2d");
  ctx.scale(dpr, dpr);
  ctx.clearRect(0, 0, c.clientWidth, c.clientHeight);
  ctx.font = "11px system-ui, sans-serif";
  return { ctx, w: c.clientWidth, h: c.clientHeight };
}

const PAD = { l: 48, r: 12, t: 12, b: 24 };

function frame(ctx, w, h, lo, hi, xlabel) {
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(PAD.l, PAD.t);
  ctx.lineTo(PAD.l, h - PAD.b);
  ctx.lineTo(w - PAD.r, h - PAD.b);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.textAlign = "right";
  for (const v of [lo, (lo + hi) / 2, hi]) {
    const y = yOf(v, lo, hi, h);
    ctx.fillText(v.toPrecision(3), PAD.l - 4, y + 4);
  }
  ctx.textAlign = "center";
  ctx.fillText(xlabel, (w + PAD.l) / 2, h - 6);
}

const yOf = (v, lo, hi, h) => h - PAD.b - ((v - lo) / (hi - lo || 1)) * (h - PAD.t - PAD.b);

function bars(id, values, colorOf, { lo, hi, xlabel, hline }) {
  const { ctx, w, h } = canvas(id);
  frame(ctx, w, h, lo, hi, xlabel);
  const bw = (w - PAD.l - PAD.r) / values.length;
  values.forEach((v, i) => {
    if (v === null) return;
    const y = yOf(Math.max(lo, Math.min(hi, v)), lo, hi, h);
    ctx.fillStyle = colorOf(i);
    ctx.fillRect(PAD.l + i * bw + 1, y, Math.max(1, bw - 2), h - PAD.b - y);
  });
  if (hline !== undefined) {
    ctx.strokeStyle = "#c33";
    ctx.setLineDash([4, 3]);
    const y = yOf(hline, lo, hi, h);
    ctx.beginPath();
    ctx.moveTo(PAD.l, y);
    ctx.lineTo(w - PAD.r, y);
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

function lines(id, xs, series, xlabel) {
  const { ctx, w, h } = canvas(id);
  const all = series.flatMap((s) => s.values);
  let lo = Math.min(...all);
  let hi = Math.max(...all);
  const span = hi - lo || Math.abs(hi) || 1;
  lo -= 0.05 * span;
  hi += 0.05 * span;
  frame(ctx, w, h, lo, hi, xlabel);
  const xOf = (i) => PAD.l + ((i + 0.5) / xs.length) * (w - PAD.l - PAD.r);
  ctx.textAlign = "center";
  ctx.fillStyle = "#555";
  xs.forEach((x, i) => ctx.fillText(String(x), xOf(i), h - PAD.b + 12));
  series.forEach((s, k) => {
    ctx.strokeStyle = s.color;
    ctx.fillStyle = s.color;
    ctx.setLineDash(s.dash ?? []);
    ctx.beginPath();
    s.values.forEach((v, i) => {
      const p = [s.flat ? (i === 0 ? PAD.l : w - PAD.r) : xOf(i), yOf(v, lo, hi, h)];
      i === 0 ? ctx.moveTo(...p) : ctx.lineTo(...p);
    });
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.textAlign = "left";
    ctx.fillText(s.name, PAD.l + 8 + k * 90, PAD.t + 10);
  });
}

function scenario() {
  return fields("scenario");
}

function updateSpectrum() {
  const v = call(spectrumExplorer, { ...scenario(), ...fields("spectrum") }, "spectrum-out");
  if (!v) return;
  const shown = v.lambdas.slice(0, Math.max(v.l0_est + 4, 8));
  const thr = 1 + Number($("spectrum").querySelector("[name=l0_threshold]").value);
  bars("spectrum-plot", shown, (i) => (i < v.l0_est ? (i < v.r_opt ? "#2a6fb0" : "#8fb7de") : "#bbb"), {
    lo: 0,
    hi: Math.max(...shown) * 1.05,
    xlabel: "eigenvalue index",
    hline: thr,
  });
  setText(
    "spectrum-out",
    `true sources ${v.l0_true}, estimated ${v.l0_est}, suggested rank ${v.r_opt}\n` +
      `index value lost at the true sources by rank: ` +
      v.resolution_loss.map((x, i) => `r=${i + 1}: ${x.toFixed(3)}`).join(", "),
  );
}

let trace = null;

function drawStep() {
  if (!trace) return;
  const k = Number($("step").value) - 1;
  const st = trace.steps[k];
  const vals = st.values.filter((x) => x !== null);
  const picked = new Set(trace.found.slice(0, k));
  const truth = new Set(trace.true_sources);
  bars("localize-plot", st.values, (i) => (i === st.selected ? "#d2691e" : truth.has(i) ? "#2a6fb0" : picked.has(i) ? "#999" : "#bbb"), {
    lo: Math.min(0, ...vals),
    hi: Math.max(...vals) * 1.05,
    xlabel: "candidate source",
  });
  setText(
    "localize-out",
    `step ${st.step}: selected ${st.selected}${truth.has(st.selected) ? " (true source)" : ""}\n` +
      `found ${JSON.stringify(trace.found)}  true ${JSON.stringify(trace.true_sources)}  rank ${trace.rank}`,
  );
}

function updateLocalize() {
  trace = call(localizationSteps, { ...scenario(), ...fields("localize") }, "localize-out");
  if (!trace) return;
  const step = $("step");
  step.max = String(trace.steps.length);
  if (Number(step.value) > trace.steps.length) step.value = String(trace.steps.length);
  drawStep();
}

function updateMse() {
  const v = call(mseCurves, scenario(), "mse-out");
  if (!v) return;
  lines(
    "mse-plot",
    v.ranks,
    [
      { name: "MV-PURE (R)", values: v.mvp_r, color: "#2a6fb0" },
      { name: "MV-PURE (N)", values: v.mvp_n, color: "#d2691e", dash: [5, 3] },
      { name: "LCMV", values: [v.lcmv_r, v.lcmv_r], color: "#888", dash: [2, 3], flat: true },
    ],
    "filter rank",
  );
  const best = v.mvp_r.indexOf(Math.min(...v.mvp_r)) + 1;
  setText(
    "mse-out",
    `lowest error at rank ${best}; leading eigenvalues ${v.lambdas.map((x) => x.toFixed(2)).join(", ")}\n` +
      `LCMV (R) ${v.lcmv_r.toFixed(4)}, LCMV (N) ${v.lcmv_n.toFixed(4)}`,
  );
}

function updateAll() {
  updateSpectrum();
  updateLocalize();
  updateMse();
}

await init();
$("scenario").addEventListener("change", updateAll);
$("spectrum").addEventListener("change", updateSpectrum);
$("localize").addEventListener("change", (e) => (e.target.id === "step" ? drawStep() : updateLocalize()));
$("step").addEventListener("input", drawStep);
window.addEventListener("resize", updateAll);
updateAll();
