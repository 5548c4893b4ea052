import init, { distortion, lossLandscape, trainDemo } from "./pkg/alignnet_web.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

function plot(canvas, series, { xmin, xmax, ymin, ymax, marks = [] }) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, m = 30;
  const sx = (x) => m + (x - xmin) / (xmax - xmin) * (w - 2 * m);
  const sy = (y) => h - m - (y - ymin) / (ymax - ymin) * (h - 2 * m);
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#000";
  ctx.strokeRect(m, m, w - 2 * m, h - 2 * m);
  ctx.fillStyle = "#000";
  ctx.font = "11px sans-serif";
  for (let t = Math.ceil(xmin); t <= xmax; t++) ctx.fillText(t, sx(t) - 3, h - m + 14);
  for (let t = Math.ceil(ymin); t <= ymax; t++) ctx.fillText(t, m - 14, sy(t) + 4);
  series.forEach((s, i) => {
    ctx.strokeStyle = s.color ?? COLORS[i % COLORS.length];
    ctx.lineWidth = s.dashed ? 1 : 2;
    ctx.setLineDash(s.dashed ? [6, 4] : []);
    ctx.beginPath();
    s.points.forEach(([x, y], j) => (j ? ctx.lineTo(sx(x), sy(y)) : ctx.moveTo(sx(x), sy(y))));
    ctx.stroke();
    if (s.label) {
      ctx.fillStyle = ctx.strokeStyle;
      ctx.fillText(s.label, m + 8, m + 14 + 14 * i);
    }
  });
  ctx.setLineDash([]);
  for (const { x, color } of marks) {
    ctx.strokeStyle = color;
    ctx.beginPath();
    ctx.moveTo(sx(x), m);
    ctx.lineTo(sx(x), h - m);
    ctx.stroke();
  }
}

function drawDistortion() {
  const sev = +document.getElementById("sev").value;
  const seed = +document.getElementById("dseed").value;
  document.getElementById("sev-v").textContent = sev.toFixed(2);
  const d = JSON.parse(distortion(sev, seed, 101));
  const ident = { points: [[1, 1], [5, 5]], color: "#aaa", dashed: true };
  const ys = d.points.map((p) => p[1]);
  plot(document.getElementById("dist"), [ident, { points: d.points }], {
    xmin: 1, xmax: 5, ymin: Math.min(1, ...ys), ymax: Math.max(5, ...ys),
  });
}

function drawLoss() {
  const k = +document.getElementById("k").value;
  document.getElementById("k-v").textContent = k;
  const l = JSON.parse(lossLandscape(k, 161));
  const zip = (ys) => l.constants.map((c, i) => [c, ys[i]]);
  plot(
    document.getElementById("loss"),
    [
      { points: zip(l.balanced), label: "balanced", color: COLORS[0] },
      { points: zip(l.pooled), label: "pooled", color: COLORS[1] },
    ],
    {
      xmin: 1, xmax: 5, ymin: 0, ymax: Math.max(...l.balanced, ...l.pooled),
      marks: [{ x: l.balanced_min, color: COLORS[0] }, { x: l.pooled_min, color: COLORS[1] }],
    },
  );
}

function runTraining() {
  const status = document.getElementById("status");
  status.textContent = "training...";
  status.className = "";
  setTimeout(() => {
    try {
      const r = JSON.parse(trainDemo(
        +document.getElementById("tsev").value,
        +document.getElementById("tseed").value,
        +document.getElementById("epochs").value,
      ));
      const names = r.scores[0].per_dataset.map((d) => d[0]);
      let html = "<table><tr><th>test RMSE</th>" + names.map((n) => `<th>${n}</th>`).join("") + "<th>All</th></tr>";
      for (const s of r.scores) {
        html += `<tr><td>${s.regimen}</td>` + s.per_dataset.map((d) => `<td>${d[1].toFixed(3)}</td>`).join("")
          + `<td>${s.pooled_rmse.toFixed(3)}</td></tr>`;
      }
      document.getElementById("scores").innerHTML = html + "</table>";
      const series = [];
      r.curves.forEach((c, i) => series.push({ points: c.points, label: c.dataset, color: COLORS[i] }));
      r.distortions.forEach(([name, pts]) => {
        const i = r.curves.findIndex((c) => c.dataset === name);
        series.push({ points: pts, color: COLORS[i], dashed: true });
      });
      const all = series.flatMap((s) => s.points.flat());
      plot(document.getElementById("align"), series, {
        xmin: Math.min(...all), xmax: Math.max(...all), ymin: Math.min(...all), ymax: Math.max(...all),
      });
      status.textContent = "";
    } catch (e) {
      status.textContent = String(e);
      status.className = "err";
    }
  }, 10);
}

await init();
for (const id of ["sev", "dseed"]) document.getElementById(id).addEventListener("input", drawDistortion);
document.getElementById("k").addEventListener("input", drawLoss);
document.getElementById("train").addEventListener("click", runTraining);
drawDistortion();
drawLoss();
