// Single-page annotation client. One annotator per session; the only client
// state is the in-progress draft, so a refresh costs at most that draft.

import { ServiceUnreachable } from "./api";
import type { AnnotationApi, FieldError } from "./api";
import {
  Answers,
  Task,
  activeQuestions,
  currentQuestion,
  isComplete,
  setAnswer,
  submissionAnswers,
} from "./state";

export interface AppOptions {
  now?: () => number;
}

export interface App {
  /** Resolves once every queued fetch/submit settles; test hook. */
  whenIdle(): Promise<void>;
}

export function createApp(root: HTMLElement, api: AnnotationApi, options: AppOptions = {}): App {
  const now = options.now ?? (() => Date.now());
  const doc = root.ownerDocument;

  let annotatorId = "";
  let batchId: string | undefined;
  let task: Task | null = null;
  let answers: Answers = {};
  let startedAt = 0;
  const guidelinesCache = new Map<string, string>();

  root.innerHTML = `
    <main class="annotator">
      <section data-screen="start">
        <h1>Annotation tasks</h1>
        <label>Annotator token
          <input id="annotator-input" autocomplete="off" placeholder="paste your worker id">
        </label>
        <label>Batch (optional)
          <input id="batch-input" autocomplete="off" placeholder="all open batches">
        </label>
        <button id="start-button">Start</button>
      </section>
      <section data-screen="task" hidden>
        <details id="guidelines-box">
          <summary>Guidelines</summary>
          <div id="guidelines"></div>
        </details>
        <div id="notice" class="notice" hidden></div>
        <div id="task-error" class="error-banner" hidden>
          <span id="task-error-text"></span>
          <button id="retry-button">Retry</button>
        </div>
        <article id="task-card">
          <p class="task-id-row">Task <span id="task-id"></span></p>
          <div class="panel"><h2>Question</h2><p id="iq-text"></p></div>
          <div class="panel"><h2>Answer</h2><p id="ia-text"></p></div>
          <div class="panel highlight"><h2>Follow-up question</h2><p id="fq-text"></p></div>
          <form id="question-form"></form>
          <button id="submit-button" disabled>Submit and next</button>
          <p class="hint">Keys 1-4 answer the highlighted question; Enter submits.</p>
        </article>
      </section>
      <section data-screen="done" hidden>
        <h1>All tasks complete</h1>
        <p>No more tasks are assigned to you. Thank you!</p>
      </section>
    </main>
  `;

  const screens = {
    start: root.querySelector<HTMLElement>('[data-screen="start"]')!,
    task: root.querySelector<HTMLElement>('[data-screen="task"]')!,
    done: root.querySelector<HTMLElement>('[data-screen="done"]')!,
  };
  const annotatorInput = root.querySelector<HTMLInputElement>("#annotator-input")!;
  const batchInput = root.querySelector<HTMLInputElement>("#batch-input")!;
  const startButton = root.querySelector<HTMLButtonElement>("#start-button")!;
  const guidelinesBox = root.querySelector<HTMLElement>("#guidelines")!;
  const notice = root.querySelector<HTMLElement>("#notice")!;
  const errorBanner = root.querySelector<HTMLElement>("#task-error")!;
  const errorText = root.querySelector<HTMLElement>("#task-error-text")!;
  const retryButton = root.querySelector<HTMLButtonElement>("#retry-button")!;
  const taskCard = root.querySelector<HTMLElement>("#task-card")!;
  const form = root.querySelector<HTMLFormElement>("#question-form")!;
  const submitButton = root.querySelector<HTMLButtonElement>("#submit-button")!;

  // fetches and submits run through one chain so they cannot interleave
  let queue: Promise<void> = Promise.resolve();
  let retryAction: (() => void) | null = null;

  function enqueue(step: () => Promise<void>): void {
    queue = queue.then(step).catch((err) => {
      showError(String(err));
    });
  }

  async function whenIdle(): Promise<void> {
    let snapshot: Promise<void>;
    do {
      snapshot = queue;
      await snapshot;
    } while (snapshot !== queue);
  }

  function showScreen(name: keyof typeof screens): void {
    for (const [key, el] of Object.entries(screens)) el.hidden = key !== name;
  }

  function showError(message: string, retry?: () => void): void {
    errorText.textContent = message;
    errorBanner.hidden = false;
    retryAction = retry ?? null;
    retryButton.hidden = !retry;
  }

  function clearError(): void {
    errorBanner.hidden = true;
    retryAction = null;
  }

  function showNotice(message: string): void {
    notice.textContent = message;
    notice.hidden = false;
  }

  function loadGuidelines(templateId: string): void {
    const cached = guidelinesCache.get(templateId);
    if (cached !== undefined) {
      guidelinesBox.innerHTML = cached;
      return;
    }
    enqueue(async () => {
      try {
        const html = await api.guidelines(templateId);
        guidelinesCache.set(templateId, html);
        guidelinesBox.innerHTML = html;
      } catch (err) {
        if (!(err instanceof ServiceUnreachable)) throw err;
        // guidelines are a courtesy: the task stays usable while we offer a retry
        guidelinesBox.innerHTML = "";
        const note = doc.createElement("div");
        note.className = "guidelines-error";
        note.textContent = "Could not load the guidelines. ";
        const retry = doc.createElement("button");
        retry.id = "guidelines-retry";
        retry.type = "button";
        retry.textContent = "Retry";
        retry.addEventListener("click", () => loadGuidelines(templateId));
        note.appendChild(retry);
        guidelinesBox.appendChild(note);
      }
    });
  }

  function renderQuestions(): void {
    if (!task) return;
    form.textContent = "";
    const active = activeQuestions(task.questions, answers);
    const current = currentQuestion(task.questions, answers);
    for (const q of active) {
      const fieldset = doc.createElement("fieldset");
      fieldset.dataset.question = q.key;
      if (current && q.key === current.key) fieldset.classList.add("current");
      const legend = doc.createElement("legend");
      legend.textContent = q.prompt;
      fieldset.appendChild(legend);
      q.options.forEach((option, index) => {
        const label = doc.createElement("label");
        label.className = "option";
        const input = doc.createElement("input");
        input.type = "radio";
        input.name = q.key;
        input.value = String(option.value);
        input.checked = answers[q.key] === option.value;
        input.addEventListener("change", () => choose(q.key, option.value));
        label.appendChild(input);
        const text = doc.createElement("span");
        text.textContent = `${option.label}`;
        label.appendChild(text);
        if (current && q.key === current.key) {
          const hint = doc.createElement("kbd");
          hint.textContent = String(index + 1);
          label.appendChild(hint);
        }
        fieldset.appendChild(label);
      });
      form.appendChild(fieldset);
    }
    submitButton.disabled = !(task && isComplete(task.questions, answers));
  }

  function choose(key: string, value: number): void {
    if (!task) return;
    answers = setAnswer(task.questions, answers, key, value);
    notice.hidden = true;
    clearFieldErrors();
    renderQuestions();
  }

  function clearFieldErrors(): void {
    for (const el of Array.from(form.querySelectorAll(".field-error"))) el.remove();
  }

  function renderFieldError(error: FieldError): void {
    clearFieldErrors();
    const message = doc.createElement("p");
    message.className = "field-error";
    message.textContent = error.message;
    const target = error.field
      ? form.querySelector(`fieldset[data-question="${error.field}"]`)
      : null;
    if (target) {
      target.appendChild(message);
    } else {
      form.appendChild(message);
    }
  }

  function renderTask(next: Task): void {
    task = next;
    answers = {};
    startedAt = now();
    clearError();
    clearFieldErrors();
    root.querySelector("#task-id")!.textContent = next.task_id;
    root.querySelector("#iq-text")!.textContent = next.iq;
    root.querySelector("#ia-text")!.textContent = next.ia;
    root.querySelector("#fq-text")!.textContent = next.fq;
    taskCard.hidden = false;
    loadGuidelines(next.template_id);
    renderQuestions();
    showScreen("task");
  }

  function advance(): void {
    enqueue(async () => {
      try {
        const next = await api.nextTask(annotatorId, batchId);
        if (next === null) {
          task = null;
          showScreen("done");
        } else {
          renderTask(next);
        }
      } catch (err) {
        if (!(err instanceof ServiceUnreachable)) throw err;
        showScreen("task");
        taskCard.hidden = task === null;
        showError("The service is not responding.", advance);
      }
    });
  }

  function submit(): void {
    if (!task || !isComplete(task.questions, answers)) return;
    const body = {
      task_id: task.task_id,
      annotator_id: annotatorId,
      answers: submissionAnswers(task.questions, answers),
      elapsed_seconds: (now() - startedAt) / 1000,
    };
    enqueue(async () => {
      let result;
      try {
        result = await api.submit(body);
      } catch (err) {
        if (!(err instanceof ServiceUnreachable)) throw err;
        showError("Submission did not reach the service.", submit);
        return;
      }
      if (result.kind === "rejected") {
        renderFieldError(result.error);
        return;
      }
      if (result.kind === "duplicate") {
        showNotice(`Already recorded (${result.message}); moving to the next task.`);
      } else {
        notice.hidden = true;
      }
      clearError();
      advance();
    });
  }

  function begin(): void {
    const token = annotatorInput.value.trim();
    if (!token) return;
    annotatorId = token;
    batchId = batchInput.value.trim() || undefined;
    advance();
  }

  startButton.addEventListener("click", begin);
  annotatorInput.addEventListener("keydown", (event) => {
    if (event.key === "Enter") begin();
  });
  batchInput.addEventListener("keydown", (event) => {
    if (event.key === "Enter") begin();
  });
  retryButton.addEventListener("click", () => {
    const action = retryAction;
    clearError();
    action?.();
  });
  submitButton.addEventListener("click", submit);

  doc.addEventListener("keydown", (event) => {
    if (screens.task.hidden || task === null) return;
    const target = event.target as HTMLElement | null;
    if (target && (target.tagName === "INPUT" || target.tagName === "TEXTAREA")) {
      if (target instanceof HTMLInputElement && target.type !== "radio") return;
    }
    if (event.key === "Enter") {
      event.preventDefault();
      submit();
      return;
    }
    const digit = Number.parseInt(event.key, 10);
    if (!Number.isNaN(digit) && digit >= 1) {
      const question = currentQuestion(task.questions, answers);
      if (question && digit <= question.options.length) {
        event.preventDefault();
        choose(question.key, question.options[digit - 1].value);
      }
    }
  });

  showScreen("start");
  return { whenIdle };
}
