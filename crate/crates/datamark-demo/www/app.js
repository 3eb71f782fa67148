// Plain-JS glue for the datamark demo. Expects the wasm-bindgen output of
// `datamark-demo` in ./pkg (see the crate README for the build command).
import init, {
  threshold_value,
  t_quantile,
  rejection_curve,
  trigger_base_image,
  trigger_marked_image,
  mini_audit,
} from "./pkg/datamark_demo.js";

await init();

const $ = (id) => document.getElementById(id);

// ---- threshold explorer ----------------------------------------------------

function drawCurve() {
  const m = +$("m").value;
  const k = +$("k").value;
  const conf = +$("conf").value;
  $("mOut").value = m;
  $("kOut").value = k;
  $("confOut").value = conf.toFixed(3);

  const threshold = threshold_value(m, k, conf);
  $("thresholdOut").textContent = (100 * threshold).toFixed(2) + "%";
  $("quantOut").textContent = t_quantile(conf, m - 1).toFixed(4);
  $("betaOut").textContent = (1 / k).toFixed(4);

  const pts = rejection_curve(m, k, conf, 241);
  const canvas = $("curve");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);

  let lo = Infinity, hi = -Infinity;
  for (let i = 1; i < pts.length; i += 2) {
    lo = Math.min(lo, pts[i]);
    hi = Math.max(hi, pts[i]);
  }
  const pad = 30;
  const x = (alpha) => pad + alpha * (w - 2 * pad);
  const y = (v) => h - pad - ((v - lo) / (hi - lo)) * (h - 2 * pad);

  // axes: zero line and threshold line
  ctx.strokeStyle = "#888";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(x(0), y(0));
  ctx.lineTo(x(1), y(0));
  ctx.stroke();

  ctx.strokeStyle = "#c0392b";
  ctx.setLineDash([5, 4]);
  ctx.beginPath();
  ctx.moveTo(x(threshold), y(lo));
  ctx.lineTo(x(threshold), y(hi));
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.fillStyle = "#c0392b";
  ctx.fillText("σ = " + (100 * threshold).toFixed(1) + "%", x(threshold) + 6, y(hi) + 12);

  // rejection region shading
  ctx.fillStyle = "rgba(192, 57, 43, 0.08)";
  ctx.fillRect(x(threshold), y(hi), x(1) - x(threshold), y(lo) - y(hi));

  // the statistic curve
  ctx.strokeStyle = "#2980b9";
  ctx.lineWidth = 2;
  ctx.beginPath();
  for (let i = 0; i < pts.length; i += 2) {
    const px = x(pts[i]);
    const py = y(pts[i + 1]);
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  }
  ctx.stroke();

  ctx.fillStyle = "#888";
  ctx.fillText("ASR α →", w - pad - 50, h - 8);
  ctx.fillText("reject null ⇒ member", x(threshold) + 6, y(hi) + 28);
}

for (const id of ["m", "k", "conf"]) $(id).addEventListener("input", drawCurve);

// ---- trigger preview -------------------------------------------------------

function paint(canvas, rgba) {
  const side = 32;
  const off = new OffscreenCanvas(side, side);
  const octx = off.getContext("2d");
  octx.putImageData(new ImageData(new Uint8ClampedArray(rgba), side, side), 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function drawImages() {
  const side = +$("side").value;
  const blend = +$("blend").value;
  const corner = +$("corner").value;
  $("sideOut").value = side;
  $("blendOut").value = blend.toFixed(2);
  paint($("orig"), trigger_base_image());
  paint($("marked"), trigger_marked_image(side, corner, blend));
}

for (const id of ["side", "blend", "corner"]) $(id).addEventListener("input", drawImages);

// ---- miniature audit -------------------------------------------------------

function showVerdict(el, info) {
  const member = info.decision === "member";
  el.textContent =
    info.decision +
    " (ASR " + (100 * info.asr).toFixed(1) + "%, benign accuracy " +
    (100 * info.benign_accuracy).toFixed(1) + "%)";
  el.className = "verdict " + (member ? "member" : "non-member");
}

function syncAuditLabels() {
  $("ratioOut").value = (100 * +$("ratio").value).toFixed(1) + "%";
  $("epochsOut").value = $("epochs").value;
  $("seedOut").value = $("seed").value;
}

for (const id of ["ratio", "epochs", "seed"]) $(id).addEventListener("input", syncAuditLabels);

$("runAudit").addEventListener("click", () => {
  $("auditJson").textContent = "training…";
  setTimeout(() => {
    const report = JSON.parse(
      mini_audit(+$("ratio").value, +$("epochs").value, BigInt($("seed").value))
    );
    showVerdict($("hotVerdict"), report.marked_model);
    showVerdict($("coldVerdict"), report.clean_model);
    $("auditJson").textContent = JSON.stringify(report, null, 2);
  }, 30);
});

drawCurve();
drawImages();
syncAuditLabels();
