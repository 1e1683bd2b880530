import init, { generate_task, Session } from "./pkg/attnguide_demo.js";

const $ = (id) => document.getElementById(id);
let session = null;

function el(tag, text, attrs = {}) {
  const e = document.createElement(tag);
  if (text !== undefined) e.textContent = text;
  Object.assign(e, attrs);
  return e;
}

function renderTask(task) {
  const t = el("table");
  const head = el("tr");
  head.append(el("th", "x"), ...task.tables.map((tb) => el("th", tb.id)));
  t.append(head);
  task.inputs.forEach((x, i) => {
    const row = el("tr");
    row.append(el("th", x), ...task.tables.map((tb) => el("td", tb.outputs[i])));
    t.append(row);
  });
  $("tables").replaceChildren(t);

  const s = el("table");
  const sh = el("tr");
  sh.append(el("th", "split"), el("th", "count"), el("th", "examples"));
  s.append(sh);
  for (const sp of task.splits) {
    const row = el("tr");
    const ex = sp.samples.map((e) => `${e.input} -> ${e.target}`).join("\n");
    row.append(el("td", sp.split), el("td", sp.count), el("td", ex, { style: "white-space: pre; text-align: left" }));
    s.append(row);
  }
  $("splits").replaceChildren(s);
}

function log(line) {
  $("log").textContent += line + "\n";
  $("log").scrollTop = $("log").scrollHeight;
}

function trainOnce() {
  const r = JSON.parse(session.train_epoch());
  const acc = Object.entries(r.accuracy).map(([k, v]) => `${k}=${v.toFixed(2)}`).join(" ");
  log(`epoch ${String(r.epoch).padStart(3)} loss ${r.loss.toFixed(4)} ${acc}`);
}

function renderDecode(d) {
  const ok = d.correct ? "ok" : "bad";
  $("result").replaceChildren(
    el("p", `expected ${d.expected.join(" ")}`),
    el("p", `predicted ${d.predicted.join(" ")}`, { className: ok }),
  );
  const t = el("table");
  const head = el("tr");
  head.append(el("th", ""), ...d.input.map((tok) => el("th", tok)));
  t.append(head);
  d.attention.forEach((row, i) => {
    const tr = el("tr");
    tr.append(el("th", d.predicted[i] ?? ""));
    row.forEach((w, j) => {
      const c = el("td", w.toFixed(2), { className: "cell", title: `step ${i}, input ${j}` });
      c.style.background = `rgba(30, 90, 200, ${w})`;
      c.style.color = w > 0.5 ? "#fff" : "#000";
      if (d.target_attention[i] === j) c.style.outline = "2px solid #e80";
      tr.append(c);
    });
    t.append(tr);
  });
  $("attention").replaceChildren(el("p", "attention per output step; orange marks the target position"), t);
}

async function main() {
  await init();
  $("gen").onclick = () => renderTask(JSON.parse(generate_task(Number($("data-seed").value))));
  $("new").onclick = () => {
    session = new Session(Number($("data-seed").value), Number($("model-seed").value), $("guided").checked, Number($("hidden").value));
    $("log").textContent = "";
    renderTask(JSON.parse(session.task()));
    for (const b of ["step", "run", "decode"]) $(b).disabled = false;
  };
  $("step").onclick = () => {
    try { trainOnce(); } catch (e) { log(String(e)); }
  };
  $("run").onclick = async () => {
    for (let i = 0; i < 10; i++) {
      try { trainOnce(); } catch (e) { log(String(e)); break; }
      await new Promise((r) => setTimeout(r, 0));
    }
  };
  $("decode").onclick = () => {
    try { renderDecode(JSON.parse(session.decode($("input").value))); } catch (e) { $("result").textContent = String(e); }
  };
  $("gen").onclick();
}

main();
