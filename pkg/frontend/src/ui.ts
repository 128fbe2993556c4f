import { ChatSession, SessionState } from './session.js';
import type { Recommendation } from './types.js';

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

export function renderTranscript(container: HTMLElement, session: ChatSession, state: SessionState): void {
  container.replaceChildren();
  for (const message of state.messages) {
    const bubble = el('div', `message ${message.speaker}`);
    bubble.appendChild(el('span', 'speaker', message.speaker === 'seeker' ? 'you' : 'bot'));
    bubble.appendChild(el('span', 'text', session.displayText(message)));
    container.appendChild(bubble);
  }
  container.scrollTop = container.scrollHeight;
}

function formatName(rec: Recommendation): string {
  return rec.year !== null ? `${rec.name} (${rec.year})` : rec.name;
}

export function renderSidebar(container: HTMLElement, state: SessionState): void {
  container.replaceChildren();
  if (state.recommendations.length === 0) {
    container.appendChild(el('p', 'empty', 'no recommendations yet'));
    return;
  }
  const list = el('ol', 'recommendations');
  for (const rec of state.recommendations) {
    const item = el('li', 'recommendation');
    item.appendChild(el('span', 'name', formatName(rec)));
    item.appendChild(el('span', 'score', rec.score.toFixed(3)));
    list.appendChild(item);
  }
  container.appendChild(list);
}

export function renderBanner(container: HTMLElement, state: SessionState): void {
  container.replaceChildren();
  container.hidden = state.error === null;
  if (state.error !== null) {
    container.appendChild(el('span', 'error-text', state.error));
    const retry = el('button', 'retry', 'retry');
    retry.id = 'retry';
    container.appendChild(retry);
  }
}

export interface UiRefs {
  transcript: HTMLElement;
  sidebar: HTMLElement;
  banner: HTMLElement;
  input: HTMLInputElement;
  send: HTMLButtonElement;
  topK: HTMLInputElement;
  topKLabel: HTMLElement;
  rawToggle: HTMLInputElement;
  reset: HTMLButtonElement;
}

export function bindUi(session: ChatSession, refs: UiRefs): void {
  const render = (state: SessionState) => {
    renderTranscript(refs.transcript, session, state);
    renderSidebar(refs.sidebar, state);
    renderBanner(refs.banner, state);
    refs.input.disabled = state.inFlight;
    refs.send.disabled = state.inFlight || refs.input.value.trim().length === 0;
    refs.topKLabel.textContent = String(state.topK);
    refs.rawToggle.checked = state.showRaw;
  };
  session.subscribe(render);

  const submit = async () => {
    const sent = await session.sendTurn(refs.input.value);
    if (sent) {
      refs.input.value = '';
    }
    refs.send.disabled = session.state().inFlight || refs.input.value.trim().length === 0;
    refs.input.focus();
  };

  refs.send.addEventListener('click', submit);
  refs.input.addEventListener('keydown', (event) => {
    if (event.key === 'Enter') void submit();
  });
  refs.input.addEventListener('input', () => {
    refs.send.disabled = session.state().inFlight || refs.input.value.trim().length === 0;
  });
  refs.topK.addEventListener('input', () => session.setTopK(Number(refs.topK.value)));
  refs.rawToggle.addEventListener('change', () => session.toggleRaw());
  refs.reset.addEventListener('click', () => session.reset());
  refs.banner.addEventListener('click', (event) => {
    if ((event.target as HTMLElement).id === 'retry') void session.retry();
  });

  render(session.state());
}
