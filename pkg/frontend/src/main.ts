import { ApiClient } from './api.js';
import { InterviewController } from './controller.js';
import { renderApp } from './render.js';

const root = document.getElementById('app');
if (!root) throw new Error('missing #app element');

const params = new URLSearchParams(window.location.search);
const api = new ApiClient(params.get('api') ?? '', undefined, params.get('token'));
const controller = new InterviewController(api);

controller.subscribe((state) => renderApp(root, state, controller));
void controller.loadCases();
