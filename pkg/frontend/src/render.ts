// DOM rendering, framework-free. Only visible utterances are ever drawn:
// the API never sends reasoning blocks, the vignette, or the case diagnosis
// before close, and these renderers add nothing beyond what the state holds.

import type { InterviewController, UiState } from './controller.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function pct(x: number): string {
  return `${(100 * x).toFixed(1)}%`;
}

export function renderCasePicker(state: UiState, controller: InterviewController): HTMLElement {
  const panel = el('section', 'panel');
  panel.append(el('h2', undefined, 'Pick a case'));
  const list = el('ul', 'case-list');
  for (const c of state.cases) {
    const item = el('li');
    const button = el('button', 'case-button', c.case_id);
    button.addEventListener('click', () => void controller.startSession(c.case_id));
    item.append(button, el('span', 'chief-complaint', ` ${c.chief_complaint}`));
    list.append(item);
  }
  panel.append(list);
  return panel;
}

export function renderTranscript(state: UiState, controller: InterviewController): HTMLElement {
  const panel = el('section', 'panel transcript');
  for (const turn of controller.transcript()) {
    const row = el('div', `turn ${turn.role}${turn.pending ? ' pending' : ''}`);
    row.append(el('span', 'speaker', turn.role === 'doctor' ? 'You' : 'Patient'));
    row.append(el('span', 'content', turn.content));
    panel.append(row);
  }
  return panel;
}

export function renderBudget(state: UiState): HTMLElement {
  const s = state.session;
  const line = el('div', 'budget');
  if (s) {
    line.textContent = `Questions used ${s.questions_asked} of ${s.max_turns} (${s.remaining_questions} left)`;
  }
  return line;
}

export function renderComposer(state: UiState, controller: InterviewController): HTMLElement {
  const form = el('form', 'composer');
  const input = el('input') as HTMLInputElement;
  input.placeholder = 'Ask the patient one question';
  const send = el('button', undefined, 'Send');
  send.toggleAttribute('disabled', !controller.canAsk());
  form.append(input, send);
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const text = input.value;
    input.value = '';
    void controller.sendQuestion(text);
  });
  return form;
}

export function renderDiagnoseForm(state: UiState, controller: InterviewController): HTMLElement {
  const k = state.session?.k ?? 5;
  const form = el('form', 'diagnose');
  form.append(el('h3', undefined, `Ranked differential (${k} labels, most likely first)`));
  const inputs: HTMLInputElement[] = [];
  for (let i = 0; i < k; i++) {
    const input = el('input') as HTMLInputElement;
    input.placeholder = `${i + 1}.`;
    inputs.push(input);
    form.append(input);
  }
  const note = el('div', 'validation');
  const submit = el('button', undefined, 'Submit diagnosis');
  form.append(submit, note);
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const labels = inputs.map((i) => i.value);
    const problem = controller.validateDiagnosis(labels);
    if (problem) {
      note.textContent = problem;
      return;
    }
    note.textContent = '';
    void controller.submitDiagnosis(labels);
  });
  return form;
}

export function renderScorePanel(state: UiState): HTMLElement {
  const panel = el('section', 'panel score');
  const score = state.score;
  if (!score) {
    panel.append(el('p', undefined, 'Scoring…'));
    return panel;
  }
  panel.append(el('h2', undefined, 'Interview score'));
  panel.append(el('p', 'dx', `Ground-truth diagnosis: ${score.dx}`));

  const b = score.breakdown;
  const breakdown = el('table', 'breakdown');
  const rows: [string, string][] = [
    ['Recall', b.recall.toFixed(3)],
    ['Rank of true diagnosis', b.rank === null ? 'not in top-k' : `#${b.rank}`],
    ['Rank credit', b.rank_term.toFixed(3)],
    ['Turn penalty', `-${b.turn_penalty.toFixed(3)}`],
    ['Total reward', b.total.toFixed(3)],
  ];
  for (const [label, value] of rows) {
    const tr = el('tr');
    tr.append(el('td', undefined, label), el('td', 'num', value));
    breakdown.append(tr);
  }
  panel.append(breakdown);

  const m = score.metrics;
  panel.append(
    el(
      'p',
      'metrics',
      `Precision ${pct(m.precision)} · Recall ${pct(m.recall)} · F1 ${pct(m.f1)} · ` +
        `Top-1 ${m.top_k_hits[0] ? 'hit' : 'miss'} · ${m.doctor_questions} questions`,
    ),
  );

  panel.append(el('h3', undefined, 'Findings elicited'));
  const checklist = el('ul', 'findings');
  for (const f of score.findings) {
    const item = el('li', f.elicited ? 'elicited' : 'missed');
    item.append(el('span', 'mark', f.elicited ? '✓' : '✗'));
    item.append(el('span', undefined, f.text));
    checklist.append(item);
  }
  panel.append(checklist);
  return panel;
}

export function renderApp(root: HTMLElement, state: UiState, controller: InterviewController): void {
  root.replaceChildren();
  if (state.error) {
    root.append(el('div', 'error', state.error));
  }
  if (state.phase === 'picking') {
    root.append(renderCasePicker(state, controller));
    return;
  }
  root.append(renderBudget(state));
  root.append(renderTranscript(state, controller));
  if (state.phase === 'interview') {
    root.append(renderComposer(state, controller));
    root.append(renderDiagnoseForm(state, controller));
  } else {
    root.append(renderScorePanel(state));
  }
}
