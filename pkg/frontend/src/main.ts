import { ServiceClient } from './api.js';
import { ChatSession } from './session.js';
import { UiRefs, bindUi } from './ui.js';

const DEFAULT_BASE_URL = 'http://localhost:8080';

function requireEl<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function main(): void {
  const baseUrlInput = requireEl<HTMLInputElement>('base-url');
  baseUrlInput.value = DEFAULT_BASE_URL;
  const client = new ServiceClient(baseUrlInput.value);
  baseUrlInput.addEventListener('change', () => {
    client.baseUrl = baseUrlInput.value.replace(/\/$/, '');
  });

  const session = new ChatSession(client);
  const refs: UiRefs = {
    transcript: requireEl('transcript'),
    sidebar: requireEl('sidebar'),
    banner: requireEl('banner'),
    input: requireEl<HTMLInputElement>('chat-input'),
    send: requireEl<HTMLButtonElement>('send'),
    topK: requireEl<HTMLInputElement>('top-k'),
    topKLabel: requireEl('top-k-value'),
    rawToggle: requireEl<HTMLInputElement>('raw-toggle'),
    reset: requireEl<HTMLButtonElement>('reset'),
  };
  bindUi(session, refs);

  const health = requireEl('health');
  client
    .getHealth()
    .then((status) => {
      health.textContent = status.model_loaded
        ? `model ${status.checkpoint?.slice(0, 12) ?? ''} loaded`
        : 'service up, no model loaded';
    })
    .catch(() => {
      health.textContent = 'service unreachable';
    });
}

main();
