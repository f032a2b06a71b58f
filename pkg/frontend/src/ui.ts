import { ApiError, nextHit, qualify, submitResponse } from "./api";
import {
  HitForm, canSubmit, formFromPayload, markSubmitted, pendingItems,
  rollback, setConfidence, setLabel,
} from "./state";

const TOKEN_KEY = "studyui.worker";

interface Session {
  workerId: string;
  form: HitForm | null;
}

let root: HTMLElement;
let session: Session = { workerId: "", form: null };

export function boot(container: HTMLElement) {
  root = container;
  session = { workerId: localStorage.getItem(TOKEN_KEY) ?? "", form: null };
  if (session.workerId) {
    void register(session.workerId);
  } else {
    renderRegister();
  }
}

// -- screens -----------------------------------------------------------

function el(html: string): HTMLElement {
  const div = document.createElement("div");
  div.innerHTML = html;
  return div.firstElementChild as HTMLElement;
}

function banner(message: string, retry?: () => void) {
  root.querySelector(".banner")?.remove();
  const box = el(`<div class="banner" role="alert"><span></span></div>`);
  (box.querySelector("span") as HTMLElement).textContent = message;
  if (retry) {
    const btn = el(`<button id="retry-btn">Try again</button>`);
    btn.addEventListener("click", () => { box.remove(); retry(); });
    box.appendChild(btn);
  }
  root.prepend(box);
}

function renderRegister() {
  root.innerHTML = `
    <section id="register">
      <h1>Sentiment annotation study</h1>
      <p>Enter your worker ID to begin or resume.</p>
      <input id="worker-token" type="text" autocomplete="off" />
      <button id="register-btn">Register</button>
    </section>`;
  const input = root.querySelector("#worker-token") as HTMLInputElement;
  const btn = root.querySelector("#register-btn") as HTMLButtonElement;
  btn.addEventListener("click", () => {
    const token = input.value.trim();
    if (token) void register(token);
  });
}

async function register(workerId: string) {
  let reply;
  try {
    reply = await qualify(workerId);
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      banner("The study is full — thank you for your interest.");
      return;
    }
    banner("Could not reach the study server. Nothing was lost.",
           () => void register(workerId));
    return;
  }
  session.workerId = workerId;
  localStorage.setItem(TOKEN_KEY, workerId);
  renderInstructions(reply.group, reply.registered);
}

function renderInstructions(group: number, fresh: boolean) {
  const resumed = fresh ? "" :
    `<p class="resumed">Welcome back — your earlier progress is saved.</p>`;
  root.innerHTML = `
    <section id="instructions">
      <h1>Instructions</h1>
      <p class="group-note">You are registered in group ${group}.</p>
      ${resumed}
      <p>You will read short movie reviews in which only some words are
      visible; the rest are masked out. For each review, guess whether the
      review is <em>positive</em> or <em>negative</em>, then rate how
      confident you are on a scale of 1 to 5.</p>
      <ul>
        <li>There are no right-answer hints: judge only from the visible words.</li>
        <li>Each screen shows five reviews. Answer all five to continue.</li>
        <li>Once submitted, answers cannot be changed.</li>
      </ul>
      <p class="fine-print">(Instructions paraphrased from the original
      study materials.)</p>
      <button id="begin-btn">I understand — begin</button>
    </section>`;
  (root.querySelector("#begin-btn") as HTMLButtonElement)
    .addEventListener("click", () => void loadTask());
}

async function loadTask() {
  let payload;
  try {
    payload = await nextHit(session.workerId);
  } catch (err) {
    if (err instanceof ApiError && err.status === 403) {
      // server lost us (restart with a fresh log): qualify again, then retry
      try {
        await qualify(session.workerId);
        payload = await nextHit(session.workerId);
      } catch {
        banner("Could not reach the study server.", () => void loadTask());
        return;
      }
    } else {
      banner("Could not reach the study server.", () => void loadTask());
      return;
    }
  }
  if (payload === null) {
    renderDone();
    return;
  }
  session.form = formFromPayload(payload);
  renderHit();
}

function confidenceRow(form: HitForm, idx: number): string {
  const item = form.items[idx]!;
  const buttons = [];
  for (let c = form.confidenceMin; c <= form.confidenceMax; c++) {
    const checked = item.confidence === c ? "checked" : "";
    const dis = item.submitted ? "disabled" : "";
    buttons.push(`<label><input type="radio" name="conf-${idx}" value="${c}"
      ${checked} ${dis} /> ${c}</label>`);
  }
  return `
    <div class="confidence">
      <span class="likert-end">not at all confident</span>
      ${buttons.join("\n")}
      <span class="likert-end">completely confident</span>
    </div>`;
}

function renderHit() {
  const form = session.form!;
  const blocks = form.items.map((item, idx) => {
    const labels = form.labels.map((name) => {
      const checked = item.label === name ? "checked" : "";
      const dis = item.submitted ? "disabled" : "";
      return `<label><input type="radio" name="label-${idx}" value="${name}"
        ${checked} ${dis} /> ${name}</label>`;
    }).join("\n");
    const status = item.submitted ? `<span class="recorded">recorded</span>` : "";
    return `
      <div class="item" data-idx="${idx}">
        <p class="review-text"></p>
        <div class="choices">${labels} ${status}</div>
        ${confidenceRow(form, idx)}
      </div>`;
  }).join("\n");

  root.innerHTML = `
    <section id="task">
      <p id="progress">Screen ${form.completedHits + 1} of ${form.totalHits}</p>
      <form id="hit-form">${blocks}</form>
      <button id="submit-btn">Submit all five</button>
    </section>`;

  // masked text must arrive in the DOM byte-for-byte, so no innerHTML here
  root.querySelectorAll(".item").forEach((node, idx) => {
    const item = form.items[idx]!;
    (node.querySelector(".review-text") as HTMLElement).textContent = item.text;
  });

  const submit = root.querySelector("#submit-btn") as HTMLButtonElement;
  submit.disabled = !canSubmit(form);

  root.querySelectorAll<HTMLInputElement>("input[type=radio]").forEach((radio) => {
    radio.addEventListener("change", () => {
      const [kind, idxStr] = radio.name.split("-");
      const idx = Number(idxStr);
      if (kind === "label") setLabel(form, idx, radio.value);
      else setConfidence(form, idx, Number(radio.value));
      submit.disabled = !canSubmit(form);
    });
  });

  submit.addEventListener("click", () => {
    if (!canSubmit(form)) return;
    submit.disabled = true;
    void submitAll(form);
  });
}

/** POST the open items one at a time; the server wants no concurrency. */
async function submitAll(form: HitForm) {
  for (const item of pendingItems(form)) {
    const idx = form.items.indexOf(item);
    markSubmitted(form, idx);
    try {
      await submitResponse(session.workerId, item.reviewId,
                           item.label!, item.confidence!);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        continue;            // already recorded server-side: keep it locked
      }
      if (err instanceof ApiError) {
        rollback(form, idx);
        renderHit();
        banner(`A response was rejected (${err.message}); please redo it.`);
        return;
      }
      item.submitted = false;   // network trouble: keep choices, allow resend
      renderHit();
      banner("Connection lost mid-submit. Your picks are kept.",
             () => void submitAll(form));
      return;
    }
  }
  await loadTask();
}

function renderDone() {
  root.innerHTML = `
    <section id="done">
      <h1>All screens completed</h1>
      <p>Thank you for taking part. You can close this tab.</p>
    </section>`;
}
